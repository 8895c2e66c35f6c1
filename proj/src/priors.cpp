#include "niff/priors.hpp"

#include "niff/error.hpp"
#include "scratch.hpp"

namespace niff {

using detail::mut;
using detail::small_vec;
using detail::view;

double PriorConfig::time_scale() const {
  if (time_mode == TimeMode::DiscreteGrid) return grid.back() - grid.front();
  return window;
}

void PriorConfig::validate() const {
  if (!(beta1 >= 0.0) || !(beta2 >= 0.0)) throw DomainError("prior: beta1 and beta2 must be >= 0");
  if (!(window > 0.0)) throw DomainError("prior: window T must be > 0");
  if (n_t < 1) throw DomainError("prior: n_t must be >= 1");
  if (time_mode == TimeMode::DiscreteGrid) {
    if (grid.empty()) throw DomainError("prior: discrete grid is empty");
    if (grid.size() < n_t) throw DomainError("prior: discrete grid has fewer points than n_t");
  }
}

template <class T>
T h1_pointwise(const OdeModel& model, const PathSpec& spec, std::span<const T> w, std::span<const T> theta,
               double t) {
  const std::size_t d = spec.state_dim;
  small_vec<T> x(d), xdot(d), f(d);
  eval_path_and_dot<T>(spec, w, t, mut(x), mut(xdot));
  model.field(view(x), t, theta, mut(f));
  for (std::size_t i = 0; i < d; ++i) f[i] = xdot[i] - f[i];
  return ad::norm2(view(f));
}

template <class T>
T h2_kernel(const PathSpec& spec, std::span<const T> w, std::span<const T> x0) {
  const std::size_t d = spec.state_dim;
  small_vec<T> x(d);
  eval_path<T>(spec, w, 0.0, mut(x));
  for (std::size_t i = 0; i < d; ++i) x[i] = x[i] - x0[i];
  return ad::norm2(view(x));
}

template <class T>
std::pair<T, T> hamiltonian_terms(const PriorConfig& cfg, const OdeModel& model, const PathSpec& spec,
                                  std::span<const T> w, std::span<const T> x0, std::span<const T> theta,
                                  std::span<const double> times) {
  if (times.empty()) throw DomainError("log_pi_estimate: no time samples");
  small_vec<T> h(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) h[i] = h1_pointwise<T>(model, spec, w, theta, times[i]);
  const double scale = cfg.time_scale() / static_cast<double>(times.size());
  T h1 = ad::sum(view(h)) * scale;
  T h2 = spec.kind == PathKind::ReparamFourier ? T(0.0) : h2_kernel<T>(spec, w, x0);
  return {h1, h2};
}

template <class T>
T log_pi_estimate(const PriorConfig& cfg, const OdeModel& model, const PathSpec& spec, std::span<const T> w,
                  std::span<const T> x0, std::span<const T> theta, std::span<const double> times) {
  const auto [h1, h2] = hamiltonian_terms<T>(cfg, model, spec, w, x0, theta, times);
  return -(cfg.beta1 * h1) - cfg.beta2 * h2;
}

std::vector<double> sample_times(const PriorConfig& cfg, std::size_t n, Rng& rng) {
  if (n < 1) throw DomainError("sample_times: n must be >= 1");
  std::vector<double> out(n);
  if (cfg.time_mode == TimeMode::DiscreteGrid) {
    const auto idx = rng.sample_without_replacement(cfg.grid.size(), n);
    for (std::size_t i = 0; i < n; ++i) out[i] = cfg.grid[idx[i]];
    return out;
  }
  for (double& t : out) t = rng.uniform(0.0, cfg.window);
  return out;
}

#define NIFF_PRIOR_INSTANTIATE(T)                                                                              \
  template T h1_pointwise<T>(const OdeModel&, const PathSpec&, std::span<const T>, std::span<const T>, double); \
  template T h2_kernel<T>(const PathSpec&, std::span<const T>, std::span<const T>);                            \
  template T log_pi_estimate<T>(const PriorConfig&, const OdeModel&, const PathSpec&, std::span<const T>,      \
                                std::span<const T>, std::span<const T>, std::span<const double>);              \
  template std::pair<T, T> hamiltonian_terms<T>(const PriorConfig&, const OdeModel&, const PathSpec&,          \
                                                std::span<const T>, std::span<const T>, std::span<const T>,    \
                                                std::span<const double>);
NIFF_PRIOR_INSTANTIATE(double)
NIFF_PRIOR_INSTANTIATE(ad::Var)

}  // namespace niff
