#include "niff/diffengine.hpp"

#include <algorithm>
#include <cassert>
#include <string>

namespace niff::ad {

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Pow: return "pow";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Sqrt: return "sqrt";
    case Op::Abs: return "abs";
    case Op::Max: return "max";
    case Op::Sum: return "sum";
    case Op::Dot: return "dot";
    case Op::Norm2: return "norm2";
  }
  return "?";
}

Tape::Tape() { edge_begin_.push_back(0); }

Var Tape::variable(double value) {
  if (!std::isfinite(value)) {
    throw NonFiniteError("non-finite value at leaf node #" + std::to_string(values_.size()));
  }
  const auto index = static_cast<std::int32_t>(values_.size());
  values_.push_back(value);
  ops_.push_back(Op::Leaf);
  edge_begin_.push_back(edge_input_.size());
  return Var(this, index, value);
}

std::vector<Var> Tape::variables(std::span<const double> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(variable(v));
  return out;
}

void Tape::clear() noexcept {
  values_.clear();
  ops_.clear();
  edge_begin_.resize(1);
  edge_input_.clear();
  edge_partial_.clear();
  pending_ = 0;
}

Var Tape::end_node(Op op, double value) {
  const std::size_t end = edge_input_.size();
  if (end == pending_) return Var(value);

  bool finite = std::isfinite(value);
  for (std::size_t e = pending_; finite && e < end; ++e) finite = std::isfinite(edge_partial_[e]);
  if (!finite) {
    edge_input_.resize(pending_);
    edge_partial_.resize(pending_);
    throw NonFiniteError(std::string("non-finite value at node #") + std::to_string(values_.size()) +
                         " (" + op_name(op) + ")");
  }
  const auto index = static_cast<std::int32_t>(values_.size());
  values_.push_back(value);
  ops_.push_back(op);
  edge_begin_.push_back(end);
  return Var(this, index, value);
}

const std::vector<double>& Tape::backward(const Var& root) {
  adjoint_.assign(values_.size(), 0.0);
  if (root.is_constant()) return adjoint_;
  assert(root.tape() == this);
  adjoint_[static_cast<std::size_t>(root.index())] = 1.0;
  for (auto i = static_cast<std::ptrdiff_t>(root.index()); i >= 0; --i) {
    const double a = adjoint_[static_cast<std::size_t>(i)];
    if (a == 0.0) continue;
    const std::size_t begin = edge_begin_[static_cast<std::size_t>(i)];
    const std::size_t end = edge_begin_[static_cast<std::size_t>(i) + 1];
    for (std::size_t e = begin; e < end; ++e) {
      adjoint_[static_cast<std::size_t>(edge_input_[e])] += a * edge_partial_[e];
    }
  }
  return adjoint_;
}

std::vector<double> Tape::gradient(const Var& root, std::span<const Var> wrt) {
  std::vector<double> out(wrt.size());
  gradient(root, wrt, out);
  return out;
}

void Tape::gradient(const Var& root, std::span<const Var> wrt, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  accumulate_gradient(root, wrt, out);
}

void Tape::accumulate_gradient(const Var& root, std::span<const Var> wrt, std::span<double> out) {
  if (out.size() != wrt.size()) throw ShapeError("gradient: output size does not match wrt size");
  const auto& adj = backward(root);
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    if (wrt[i].is_constant()) continue;
    assert(wrt[i].tape() == this);
    out[i] += adj[static_cast<std::size_t>(wrt[i].index())];
  }
}

namespace {

Tape* tape_of(const Var& a, const Var& b) {
  assert(a.tape() == nullptr || b.tape() == nullptr || a.tape() == b.tape());
  return a.tape() != nullptr ? a.tape() : b.tape();
}

Var unary(Op op, const Var& x, double value, double partial) {
  if (x.is_constant()) return Var(value);
  Tape& t = *x.tape();
  t.begin_node();
  t.add_edge(x, partial);
  return t.end_node(op, value);
}

Var binary(Op op, const Var& a, const Var& b, double value, double da, double db) {
  Tape* t = tape_of(a, b);
  if (t == nullptr) return Var(value);
  t->begin_node();
  if (!a.is_constant()) t->add_edge(a, da);
  if (!b.is_constant()) t->add_edge(b, db);
  return t->end_node(op, value);
}

Tape* tape_of(std::span<const Var> xs) {
  for (const Var& x : xs) {
    if (!x.is_constant()) return x.tape();
  }
  return nullptr;
}

}  // namespace

Var operator+(const Var& a, const Var& b) {
  return binary(Op::Add, a, b, a.value() + b.value(), 1.0, 1.0);
}

Var operator-(const Var& a, const Var& b) {
  return binary(Op::Sub, a, b, a.value() - b.value(), 1.0, -1.0);
}

Var operator*(const Var& a, const Var& b) {
  return binary(Op::Mul, a, b, a.value() * b.value(), b.value(), a.value());
}

Var operator/(const Var& a, const Var& b) {
  const double q = a.value() / b.value();
  return binary(Op::Div, a, b, q, 1.0 / b.value(), -q / b.value());
}

Var operator-(const Var& a) { return unary(Op::Neg, a, -a.value(), -1.0); }

Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return unary(Op::Exp, x, e, e);
}

Var log(const Var& x) { return unary(Op::Log, x, std::log(x.value()), 1.0 / x.value()); }

Var sin(const Var& x) { return unary(Op::Sin, x, std::sin(x.value()), std::cos(x.value())); }

Var cos(const Var& x) { return unary(Op::Cos, x, std::cos(x.value()), -std::sin(x.value())); }

Var tanh(const Var& x) {
  const double th = std::tanh(x.value());
  return unary(Op::Tanh, x, th, 1.0 - th * th);
}

Var sigmoid(const Var& x) {
  const double s = sigmoid(x.value());
  return unary(Op::Sigmoid, x, s, s * (1.0 - s));
}

Var sqrt(const Var& x) {
  const double r = std::sqrt(x.value());
  return unary(Op::Sqrt, x, r, 0.5 / r);
}

Var abs(const Var& x) {
  const double v = x.value();
  return unary(Op::Abs, x, std::abs(v), v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
}

Var square(const Var& x) { return unary(Op::Mul, x, x.value() * x.value(), 2.0 * x.value()); }

Var pow(const Var& x, double p) {
  const double v = std::pow(x.value(), p);
  const double d = p == 0.0 ? 0.0 : p * std::pow(x.value(), p - 1.0);
  return unary(Op::Pow, x, v, d);
}

Var pow(const Var& x, const Var& p) {
  const double v = std::pow(x.value(), p.value());
  const double dx = p.value() == 0.0 ? 0.0 : p.value() * std::pow(x.value(), p.value() - 1.0);
  const double dp = p.is_constant() ? 0.0 : v * std::log(x.value());
  return binary(Op::Pow, x, p, v, dx, dp);
}

Var max(const Var& a, const Var& b) {
  // Ties send the adjoint to the first argument.
  const bool first = a.value() >= b.value();
  return binary(Op::Max, a, b, first ? a.value() : b.value(), first ? 1.0 : 0.0, first ? 0.0 : 1.0);
}

Var sum(std::span<const Var> xs) {
  double s = 0.0;
  for (const Var& x : xs) s += x.value();
  Tape* t = tape_of(xs);
  if (t == nullptr) return Var(s);
  t->begin_node();
  for (const Var& x : xs) {
    if (!x.is_constant()) t->add_edge(x, 1.0);
  }
  return t->end_node(Op::Sum, s);
}

Var dot(std::span<const Var> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].value() * b[i];
  Tape* t = tape_of(a);
  if (t == nullptr) return Var(s);
  t->begin_node();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_constant()) t->add_edge(a[i], b[i]);
  }
  return t->end_node(Op::Dot, s);
}

Var dot(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].value() * b[i].value();
  Tape* t = tape_of(a);
  if (t == nullptr) t = tape_of(b);
  if (t == nullptr) return Var(s);
  t->begin_node();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_constant()) t->add_edge(a[i], b[i].value());
    if (!b[i].is_constant()) t->add_edge(b[i], a[i].value());
  }
  return t->end_node(Op::Dot, s);
}

Var norm2(std::span<const Var> xs) {
  double s = 0.0;
  for (const Var& x : xs) s += x.value() * x.value();
  Tape* t = tape_of(xs);
  if (t == nullptr) return Var(s);
  t->begin_node();
  for (const Var& x : xs) {
    if (!x.is_constant()) t->add_edge(x, 2.0 * x.value());
  }
  return t->end_node(Op::Norm2, s);
}

}  // namespace niff::ad
