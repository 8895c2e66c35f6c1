#pragma once

// Define-by-run reverse-mode differentiation.
//
// A Tape is an append-only Wengert list. Each node stores its primal value and
// the local partial derivatives with respect to its inputs, so the backward
// sweep is a single reverse pass of multiply-accumulates. Constants never touch
// the tape: a Var with a negative index is a plain number.
//
// Unsupported primitives are rejected at compile time (there is simply no
// overload for them); non-finite values are rejected when a node is recorded.

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "niff/error.hpp"

namespace niff::ad {

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Pow,
  Exp,
  Log,
  Sin,
  Cos,
  Tanh,
  Sigmoid,
  Sqrt,
  Abs,
  Max,
  Sum,
  Dot,
  Norm2,
};

const char* op_name(Op op) noexcept;

class Tape;

class Var {
 public:
  Var() = default;
  // Implicit: numbers mix freely with tape variables.
  Var(double value) : value_(value) {}  // NOLINT(google-explicit-constructor)

  double value() const noexcept { return value_; }
  bool is_constant() const noexcept { return index_ < 0; }
  std::int32_t index() const noexcept { return index_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::int32_t index, double value) : tape_(tape), index_(index), value_(value) {}

  Tape* tape_ = nullptr;
  std::int32_t index_ = -1;
  double value_ = 0.0;
};

class Tape {
 public:
  Tape();

  /// New independent variable (a leaf).
  Var variable(double value);
  std::vector<Var> variables(std::span<const double> values);

  /// Drops all nodes but keeps the allocated storage. Vars from before the
  /// call must not be used afterwards.
  void clear() noexcept;

  std::size_t size() const noexcept { return values_.size(); }
  double value(std::int32_t node) const { return values_.at(static_cast<std::size_t>(node)); }
  Op op(std::int32_t node) const { return ops_.at(static_cast<std::size_t>(node)); }

  // Low-level node construction, used by the primitives below. Edges from
  // constants must not be added. A node without edges folds to a constant.
  void begin_node() noexcept { pending_ = edge_input_.size(); }
  void add_edge(const Var& input, double partial) {
    edge_input_.push_back(input.index_);
    edge_partial_.push_back(partial);
  }
  Var end_node(Op op, double value);

  /// Reverse sweep from a scalar root; returns one adjoint per node up to and
  /// including the root. The buffer is owned by the tape and reused.
  const std::vector<double>& backward(const Var& root);

  /// Adjoints of `wrt` (constants get zero).
  std::vector<double> gradient(const Var& root, std::span<const Var> wrt);
  void gradient(const Var& root, std::span<const Var> wrt, std::span<double> out);
  /// Adds the adjoints of `wrt` into `out`.
  void accumulate_gradient(const Var& root, std::span<const Var> wrt, std::span<double> out);

 private:
  std::vector<double> values_;
  std::vector<Op> ops_;
  std::vector<std::size_t> edge_begin_;  // size() + 1 entries
  std::vector<std::int32_t> edge_input_;
  std::vector<double> edge_partial_;
  std::vector<double> adjoint_;
  std::size_t pending_ = 0;
};

inline double value_of(double x) noexcept { return x; }
inline double value_of(const Var& x) noexcept { return x.value(); }

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

Var exp(const Var& x);
Var log(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var sqrt(const Var& x);
Var abs(const Var& x);
Var square(const Var& x);
Var pow(const Var& x, double p);
Var pow(const Var& x, const Var& p);
Var max(const Var& a, const Var& b);

Var sum(std::span<const Var> xs);
Var dot(std::span<const Var> a, std::span<const double> b);
Var dot(std::span<const Var> a, std::span<const Var> b);
Var norm2(std::span<const Var> xs);

// Plain-number counterparts with the same evaluation order, so templated code
// produces bit-identical primal values on both paths.
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double square(double x) { return x * x; }
inline double sum(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double norm2(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x * x;
  return s;
}

/// Gradient of `fn` at `at`. `fn` takes `std::span<const Var>` and returns a Var.
template <class Fn>
std::pair<double, std::vector<double>> value_and_grad(Fn&& fn, std::span<const double> at) {
  Tape tape;
  const std::vector<Var> x = tape.variables(at);
  const Var y = fn(std::span<const Var>(x));
  return {y.value(), tape.gradient(y, x)};
}

template <class Fn>
std::vector<double> grad(Fn&& fn, std::span<const double> at) {
  return value_and_grad(std::forward<Fn>(fn), at).second;
}

}  // namespace niff::ad
