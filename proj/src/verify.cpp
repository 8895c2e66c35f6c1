#include "niff/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace niff::verify {

std::vector<double> fd_grad(const ScalarFn& fn, std::span<const double> at, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_grad: h must be > 0");
  std::vector<double> x(at.begin(), at.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = fn(x);
    x[i] = xi - h;
    const double fm = fn(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_rel_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

std::pair<double, double> gaussian_conjugate_posterior(double prior_mean, double prior_var, double obs,
                                                       double obs_var) {
  if (prior_var < 0.0 || obs_var < 0.0) throw std::invalid_argument("variances must be >= 0");
  if (prior_var == 0.0) return {prior_mean, 0.0};
  if (std::isinf(obs_var)) return {prior_mean, prior_var};
  const double precision = 1.0 / prior_var + 1.0 / obs_var;
  const double var = 1.0 / precision;
  return {var * (prior_mean / prior_var + obs / obs_var), var};
}

double exact_h1_constant_path(std::span<const double> c, double window) {
  double s = 0.0;
  for (double v : c) s += v * v;
  return window * s;
}

}  // namespace niff::verify
