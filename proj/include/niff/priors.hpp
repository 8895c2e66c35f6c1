#pragma once

// Relaxed physics-informed conditional prior
//   p(w | x0, theta) ∝ exp(-beta1 H1(w, theta) - beta2 H2(x(0; w), x0)),
// with H1 the time-integrated squared ODE residual of the path and H2 the
// squared distance between the path's initial value and x0.

#include <span>
#include <vector>

#include "niff/diffengine.hpp"
#include "niff/models.hpp"
#include "niff/paths.hpp"
#include "niff/rng.hpp"

namespace niff {

enum class TimeMode { UniformContinuous, DiscreteGrid };

struct PriorConfig {
  double beta1 = 200.0;
  double beta2 = 1e5;
  double window = 1.0;  // T, seconds
  std::size_t n_t = 10;
  TimeMode time_mode = TimeMode::UniformContinuous;
  std::vector<double> grid;  // DiscreteGrid only

  /// T, or the grid span in DiscreteGrid mode.
  double time_scale() const;
  void validate() const;
};

/// ||dx/dt(t; w) - f(x(t; w), t; theta)||^2.
template <class T>
T h1_pointwise(const OdeModel& model, const PathSpec& spec, std::span<const T> w, std::span<const T> theta,
               double t);

/// ||x(0; w) - x0||^2.
template <class T>
T h2_kernel(const PathSpec& spec, std::span<const T> w, std::span<const T> x0);

/// -beta1 * time_scale * mean_i h1(t_i) - beta2 * H2. The reparameterized
/// Fourier path pins x(0; w) = x0 structurally, so its H2 term is omitted
/// and `w` must be the expanded coefficient vector.
template <class T>
T log_pi_estimate(const PriorConfig& cfg, const OdeModel& model, const PathSpec& spec, std::span<const T> w,
                  std::span<const T> x0, std::span<const T> theta, std::span<const double> times);

/// The two pieces of log_pi_estimate: (time_scale * mean h1, H2).
template <class T>
std::pair<T, T> hamiltonian_terms(const PriorConfig& cfg, const OdeModel& model, const PathSpec& spec,
                                  std::span<const T> w, std::span<const T> x0, std::span<const T> theta,
                                  std::span<const double> times);

/// i.i.d. U[0, T], or distinct grid points in DiscreteGrid mode.
std::vector<double> sample_times(const PriorConfig& cfg, std::size_t n, Rng& rng);

#define NIFF_PRIOR_EXTERN(T)                                                                                    \
  extern template T h1_pointwise<T>(const OdeModel&, const PathSpec&, std::span<const T>, std::span<const T>,   \
                                    double);                                                                    \
  extern template T h2_kernel<T>(const PathSpec&, std::span<const T>, std::span<const T>);                      \
  extern template T log_pi_estimate<T>(const PriorConfig&, const OdeModel&, const PathSpec&, std::span<const T>, \
                                       std::span<const T>, std::span<const T>, std::span<const double>);        \
  extern template std::pair<T, T> hamiltonian_terms<T>(const PriorConfig&, const OdeModel&, const PathSpec&,   \
                                                       std::span<const T>, std::span<const T>,                  \
                                                       std::span<const T>, std::span<const double>);
NIFF_PRIOR_EXTERN(double)
NIFF_PRIOR_EXTERN(ad::Var)
#undef NIFF_PRIOR_EXTERN

}  // namespace niff
