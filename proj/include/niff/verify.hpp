#pragma once

// Reference computations for tests. Nothing here calls the code it is used to
// check: only closed forms and plain finite differences.

#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace niff::verify {

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / (2h).
std::vector<double> fd_grad(const ScalarFn& fn, std::span<const double> at, double h = 1e-5);

/// Max over entries of |a - b| / max(|a|, |b|, floor).
double max_rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

/// Normal prior N(prior_mean, prior_var) and one observation with variance
/// obs_var; returns the posterior (mean, variance). An infinite obs_var gives
/// the prior back; a zero prior_var pins the prior mean.
std::pair<double, double> gaussian_conjugate_posterior(double prior_mean, double prior_var, double obs,
                                                       double obs_var);

/// Integral over [0, T] of ||d/dt c - (-c)||^2 for the constant path c under
/// dx/dt = -x, i.e. T ||c||^2.
double exact_h1_constant_path(std::span<const double> c, double window);

}  // namespace niff::verify
