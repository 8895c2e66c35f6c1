#include "niff/paths.hpp"

#include <cmath>
#include <numbers>

#include "niff/error.hpp"
#include "niff/rng.hpp"
#include "scratch.hpp"

namespace niff {

using detail::mut;
using detail::small_vec;
using detail::view;

const char* path_kind_name(PathKind kind) noexcept {
  switch (kind) {
    case PathKind::Fourier: return "fourier";
    case PathKind::Rbf: return "rbf";
    case PathKind::ResidualNet: return "residual_net";
    case PathKind::ReparamFourier: return "reparam_fourier";
  }
  return "?";
}

PathKind parse_path_kind(const std::string& name) {
  if (name == "fourier") return PathKind::Fourier;
  if (name == "rbf") return PathKind::Rbf;
  if (name == "residual_net") return PathKind::ResidualNet;
  if (name == "reparam_fourier") return PathKind::ReparamFourier;
  throw ConfigError("unknown path kind '" + name + "' (expected fourier, rbf, residual_net or reparam_fourier)");
}

std::size_t PathSpec::basis_size() const noexcept {
  switch (basis) {
    case BasisKind::None: return 0;
    case BasisKind::Fourier: return 2 * modes + 1;
    case BasisKind::Rbf: return rbf_count;
  }
  return 0;
}

double PathSpec::rbf_center(std::size_t k) const {
  if (!rbf_centers.empty()) return rbf_centers.at(k);
  if (rbf_count <= 1) return 0.0;
  return static_cast<double>(k) / static_cast<double>(rbf_count - 1);
}

void PathSpec::validate() const {
  if (state_dim < 1) throw DomainError("path: state_dim must be >= 1");
  if (!(window > 0.0)) throw DomainError("path: window T must be > 0");
  if (period < 0.0) throw DomainError("path: period must be > 0");
  switch (kind) {
    case PathKind::Fourier:
    case PathKind::ReparamFourier:
      if (basis != BasisKind::Fourier) throw DomainError("path: Fourier kinds need a Fourier basis");
      break;
    case PathKind::Rbf:
      if (basis != BasisKind::Rbf) throw DomainError("path: rbf kind needs an rbf basis");
      break;
    case PathKind::ResidualNet:
      if (encoder_modes < 1) throw DomainError("path: encoder_modes must be >= 1");
      if (hidden_widths.empty()) throw DomainError("path: residual network needs at least one hidden layer");
      for (auto h : hidden_widths) {
        if (h < 1) throw DomainError("path: hidden widths must be >= 1");
      }
      break;
  }
  if (basis == BasisKind::Fourier && modes < 1) throw DomainError("path: Fourier modes K must be >= 1");
  if (basis == BasisKind::Rbf) {
    if (rbf_count < 1) throw DomainError("path: rbf center count must be >= 1");
    if (!(rbf_scale > 0.0)) throw DomainError("path: rbf scale must be > 0");
    if (!rbf_centers.empty() && rbf_centers.size() != rbf_count) {
      throw DomainError("path: rbf_centers length differs from the center count");
    }
    for (double z : rbf_centers) {
      if (z < 0.0 || z > 1.0) throw DomainError("path: rbf centers must lie in normalized time [0, 1]");
    }
  }
  if (kind == PathKind::ReparamFourier) {
    if (dependent_index >= basis_size()) throw DomainError("path: dependent basis index out of range");
    if (dependent_index % 2 == 1) throw SingularBasisError(dependent_index);
  }
}

PathSpec fourier_path(std::size_t state_dim, double window, std::size_t modes, double period) {
  PathSpec s;
  s.kind = PathKind::Fourier;
  s.state_dim = state_dim;
  s.window = window;
  s.period = period;
  s.basis = BasisKind::Fourier;
  s.modes = modes;
  s.validate();
  return s;
}

PathSpec rbf_path(std::size_t state_dim, double window, std::size_t centers, double scale) {
  PathSpec s;
  s.kind = PathKind::Rbf;
  s.state_dim = state_dim;
  s.window = window;
  s.basis = BasisKind::Rbf;
  s.rbf_count = centers;
  s.rbf_scale = scale;
  s.validate();
  return s;
}

PathSpec residual_path(PathSpec basis_spec, std::size_t encoder_modes, std::vector<std::size_t> hidden_widths) {
  PathSpec s = std::move(basis_spec);
  s.kind = PathKind::ResidualNet;
  s.encoder_modes = encoder_modes;
  s.hidden_widths = std::move(hidden_widths);
  s.validate();
  return s;
}

PathSpec reparam_fourier_path(std::size_t state_dim, double window, std::size_t modes, std::size_t dependent_index,
                              double period) {
  PathSpec s = fourier_path(state_dim, window, modes, period);
  s.kind = PathKind::ReparamFourier;
  s.dependent_index = dependent_index;
  s.validate();
  return s;
}

const Slice& PathLayout::find(const std::string& name) const {
  for (const auto& s : slices) {
    if (s.name == name) return s;
  }
  throw ShapeError("path layout has no slice '" + name + "'");
}

PathLayout layout(const PathSpec& spec) {
  PathLayout out;
  auto add = [&](std::string name, std::size_t size) {
    out.slices.push_back({std::move(name), out.total, size});
    out.total += size;
  };
  if (spec.has_network()) {
    std::size_t in = spec.encoder_size();
    for (std::size_t l = 0; l < spec.hidden_widths.size(); ++l) {
      const std::size_t width = spec.hidden_widths[l];
      add("hidden" + std::to_string(l + 1) + ".weight", width * in);
      add("hidden" + std::to_string(l + 1) + ".bias", width);
      in = width;
    }
    add("out.weight", spec.state_dim * in);
    add("out.bias", spec.state_dim);
  }
  if (spec.basis_size() > 0) add("basis", spec.state_dim * spec.basis_size());
  return out;
}

std::size_t param_count(const PathSpec& spec) { return layout(spec).total; }

std::size_t latent_count(const PathSpec& spec) {
  const std::size_t n = param_count(spec);
  return spec.kind == PathKind::ReparamFourier ? n - spec.state_dim : n;
}

void fourier_features(std::size_t modes, double period, double t, std::span<double> feat, std::span<double> dfeat) {
  const double base = 2.0 * std::numbers::pi / period;
  const double s1 = std::sin(base * t);
  const double c1 = std::cos(base * t);
  feat[0] = 1.0;
  dfeat[0] = 0.0;
  double s = s1;
  double c = c1;
  for (std::size_t k = 1; k <= modes; ++k) {
    const double omega = base * static_cast<double>(k);
    feat[2 * k - 1] = s;
    feat[2 * k] = c;
    dfeat[2 * k - 1] = omega * c;
    dfeat[2 * k] = -omega * s;
    const double sn = s * c1 + c * s1;
    c = c * c1 - s * s1;
    s = sn;
  }
}

void basis_values(const PathSpec& spec, double t, std::span<double> psi, std::span<double> dpsi) {
  switch (spec.basis) {
    case BasisKind::None:
      return;
    case BasisKind::Fourier:
      fourier_features(spec.modes, spec.effective_period(), t, psi, dpsi);
      return;
    case BasisKind::Rbf: {
      const double u = t / spec.window;
      for (std::size_t k = 0; k < spec.rbf_count; ++k) {
        const double r = u - spec.rbf_center(k);
        psi[k] = std::exp(-r * r / (2.0 * spec.rbf_scale));
        dpsi[k] = -psi[k] * r / spec.rbf_scale / spec.window;
      }
      return;
    }
  }
}

double swish(double x) noexcept { return x * ad::sigmoid(x); }

namespace {

// Shared evaluator; `xdot` may be null.
template <class T>
void evaluate(const PathSpec& spec, std::span<const T> w, double t, T* x, T* xdot) {
  const std::size_t d = spec.state_dim;
  const std::size_t nb = spec.basis_size();
  std::size_t off = 0;

  small_vec<T> net, dnet;
  if (spec.has_network()) {
    const std::size_t ne = spec.encoder_size();
    small_vec<double> e(ne), de(ne);
    fourier_features(spec.encoder_modes, spec.effective_period(), t, mut(e), mut(de));

    small_vec<T> h, dh;
    std::size_t in = ne;
    bool first = true;
    for (const std::size_t width : spec.hidden_widths) {
      const auto weight = w.subspan(off, width * in);
      off += width * in;
      const auto bias = w.subspan(off, width);
      off += width;
      small_vec<T> nh(width), ndh(xdot ? width : 0);
      for (std::size_t j = 0; j < width; ++j) {
        const auto row = weight.subspan(j * in, in);
        const T a = (first ? ad::dot(row, view(e)) : ad::dot(row, view(h))) + bias[j];
        const T s = ad::sigmoid(a);
        const T hv = a * s;
        nh[j] = hv;
        if (xdot) {
          const T da = first ? ad::dot(row, view(de)) : ad::dot(row, view(dh));
          ndh[j] = (s + hv * (1.0 - s)) * da;
        }
      }
      h = std::move(nh);
      dh = std::move(ndh);
      in = width;
      first = false;
    }
    const auto weight = w.subspan(off, d * in);
    off += d * in;
    const auto bias = w.subspan(off, d);
    off += d;
    net.resize(d);
    if (xdot) dnet.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      const auto row = weight.subspan(i * in, in);
      net[i] = ad::dot(row, view(h)) + bias[i];
      if (xdot) dnet[i] = ad::dot(row, view(dh));
    }
  }

  small_vec<double> psi(nb), dpsi(nb);
  if (nb > 0) basis_values(spec, t, mut(psi), mut(dpsi));
  const auto coef = w.subspan(off, d * nb);
  for (std::size_t i = 0; i < d; ++i) {
    const auto row = coef.subspan(i * nb, nb);
    if (nb == 0) {
      x[i] = net[i];
      if (xdot) xdot[i] = dnet[i];
      continue;
    }
    const T xb = ad::dot(row, view(psi));
    x[i] = net.empty() ? xb : net[i] + xb;
    if (xdot) {
      const T dxb = ad::dot(row, view(dpsi));
      xdot[i] = net.empty() ? dxb : dnet[i] + dxb;
    }
  }
}

void check_w(const PathSpec& spec, std::size_t n) {
  const std::size_t expected = param_count(spec);
  if (n != expected) {
    throw ShapeError("path parameters have length " + std::to_string(n) + ", layout expects " +
                     std::to_string(expected));
  }
}

}  // namespace

template <class T>
void eval_path(const PathSpec& spec, std::span<const T> w, double t, std::span<T> x) {
  evaluate<T>(spec, w, t, x.data(), nullptr);
}

template <class T>
void eval_path_dot(const PathSpec& spec, std::span<const T> w, double t, std::span<T> xdot) {
  small_vec<T> x(spec.state_dim);
  evaluate<T>(spec, w, t, x.data(), xdot.data());
}

template <class T>
void eval_path_and_dot(const PathSpec& spec, std::span<const T> w, double t, std::span<T> x, std::span<T> xdot) {
  evaluate<T>(spec, w, t, x.data(), xdot.data());
}

std::vector<double> eval_path(const PathSpec& spec, std::span<const double> w, double t) {
  check_w(spec, w.size());
  std::vector<double> x(spec.state_dim);
  eval_path<double>(spec, w, t, x);
  return x;
}

std::vector<double> eval_path_dot(const PathSpec& spec, std::span<const double> w, double t) {
  check_w(spec, w.size());
  std::vector<double> xd(spec.state_dim);
  eval_path_dot<double>(spec, w, t, xd);
  return xd;
}

std::vector<double> initial_value(const PathSpec& spec, std::span<const double> w) { return eval_path(spec, w, 0.0); }

template <class T>
void reparam_expand(const PathSpec& spec, std::span<const T> x0, std::span<const T> w_free, std::span<T> w_full) {
  const std::size_t nb = spec.basis_size();
  const std::size_t dep = spec.dependent_index;
  if (dep % 2 == 1) throw SingularBasisError(dep);
  // Fourier basis at t = 0: 1 for the constant and cosine terms, 0 for sines.
  small_vec<double> psi0(nb - 1);
  for (std::size_t j = 0, jj = 0; j < nb; ++j) {
    if (j == dep) continue;
    psi0[jj++] = (j % 2 == 0) ? 1.0 : 0.0;
  }
  const double psi_dep = 1.0;
  for (std::size_t i = 0; i < spec.state_dim; ++i) {
    const auto free = w_free.subspan(i * (nb - 1), nb - 1);
    const auto full = w_full.subspan(i * nb, nb);
    for (std::size_t j = 0, jj = 0; j < nb; ++j) {
      if (j != dep) full[j] = free[jj++];
    }
    full[dep] = (x0[i] - ad::dot(free, view(psi0))) / psi_dep;
  }
}

std::vector<double> reparam_expand(const PathSpec& spec, std::span<const double> x0,
                                   std::span<const double> w_free) {
  if (spec.kind != PathKind::ReparamFourier) throw DomainError("reparam_expand needs a reparam_fourier path");
  if (x0.size() != spec.state_dim) throw ShapeError("reparam_expand: x0 has the wrong length");
  if (w_free.size() != latent_count(spec)) throw ShapeError("reparam_expand: free coefficients have the wrong length");
  std::vector<double> full(param_count(spec));
  reparam_expand<double>(spec, x0, w_free, full);
  return full;
}

std::vector<double> reparam_fourier_dependent(const PathSpec& spec, std::span<const double> x0,
                                              std::span<const double> w_free) {
  const auto full = reparam_expand(spec, x0, w_free);
  std::vector<double> out(spec.state_dim);
  for (std::size_t i = 0; i < spec.state_dim; ++i) out[i] = full[i * spec.basis_size() + spec.dependent_index];
  return out;
}

std::vector<double> init_params(const PathSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<double> w;
  w.reserve(latent_count(spec));
  if (spec.has_network()) {
    std::size_t in = spec.encoder_size();
    for (const std::size_t width : spec.hidden_widths) {
      const double limit = std::sqrt(6.0 / static_cast<double>(in + width));
      for (std::size_t k = 0; k < width * in; ++k) w.push_back(rng.uniform(-limit, limit));
      w.insert(w.end(), width, 0.0);
      in = width;
    }
    w.insert(w.end(), spec.state_dim * in + spec.state_dim, 0.0);
  }
  const std::size_t n_basis = latent_count(spec) - w.size();
  for (std::size_t k = 0; k < n_basis; ++k) w.push_back(0.1 * rng.gaussian());
  return w;
}

template void eval_path<double>(const PathSpec&, std::span<const double>, double, std::span<double>);
template void eval_path<ad::Var>(const PathSpec&, std::span<const ad::Var>, double, std::span<ad::Var>);
template void eval_path_dot<double>(const PathSpec&, std::span<const double>, double, std::span<double>);
template void eval_path_dot<ad::Var>(const PathSpec&, std::span<const ad::Var>, double, std::span<ad::Var>);
template void eval_path_and_dot<double>(const PathSpec&, std::span<const double>, double, std::span<double>,
                                        std::span<double>);
template void eval_path_and_dot<ad::Var>(const PathSpec&, std::span<const ad::Var>, double, std::span<ad::Var>,
                                         std::span<ad::Var>);
template void reparam_expand<double>(const PathSpec&, std::span<const double>, std::span<const double>,
                                     std::span<double>);
template void reparam_expand<ad::Var>(const PathSpec&, std::span<const ad::Var>, std::span<const ad::Var>,
                                      std::span<ad::Var>);

}  // namespace niff
