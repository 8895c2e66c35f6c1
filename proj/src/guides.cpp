#include "niff/guides.hpp"

#include <cmath>

#include "niff/error.hpp"
#include "scratch.hpp"

namespace niff {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

using detail::mut;
using detail::small_vec;
using detail::view;

std::size_t packed(std::size_t i, std::size_t j) { return i * (i + 1) / 2 + j; }

}  // namespace

std::size_t guide_param_count(GuideFamily family, std::size_t dim) noexcept {
  return family == GuideFamily::Diagonal ? 2 * dim : dim + dim * (dim + 1) / 2;
}

Guide Guide::diagonal(std::vector<double> mean, double scale) {
  if (!(scale > 0.0)) throw DomainError("guide scale must be > 0");
  Guide g;
  g.family = GuideFamily::Diagonal;
  g.dim = mean.size();
  g.params = std::move(mean);
  g.params.resize(2 * g.dim, std::log(scale));
  return g;
}

Guide Guide::full_rank(std::vector<double> mean, double scale) {
  if (!(scale > 0.0)) throw DomainError("guide scale must be > 0");
  Guide g;
  g.family = GuideFamily::FullRank;
  g.dim = mean.size();
  g.params = std::move(mean);
  g.params.resize(guide_param_count(GuideFamily::FullRank, g.dim), 0.0);
  for (std::size_t i = 0; i < g.dim; ++i) g.params[g.dim + packed(i, i)] = std::log(scale);
  return g;
}

std::vector<double> Guide::cholesky() const {
  std::vector<double> l(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    if (family == GuideFamily::Diagonal) {
      l[i * dim + i] = std::exp(params[dim + i]);
      continue;
    }
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = params[dim + packed(i, j)];
      l[i * dim + j] = i == j ? std::exp(v) : v;
    }
  }
  return l;
}

std::vector<double> Guide::covariance() const {
  const auto l = cholesky();
  std::vector<double> c(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) s += l[i * dim + k] * l[j * dim + k];
      c[i * dim + j] = s;
    }
  }
  return c;
}

std::vector<double> Guide::stddev() const {
  const auto c = covariance();
  std::vector<double> s(dim);
  for (std::size_t i = 0; i < dim; ++i) s[i] = std::sqrt(c[i * dim + i]);
  return s;
}

std::vector<double> Guide::sample(std::span<const double> eps) const {
  if (eps.size() != dim) throw ShapeError("guide sample: eps has the wrong length");
  std::vector<double> z(dim);
  guide_sample<double>(family, dim, params, eps, z);
  return z;
}

double Guide::log_density(std::span<const double> z) const {
  if (z.size() != dim) throw ShapeError("guide log_density: point has the wrong length");
  return guide_log_density<double>(family, dim, params, z);
}

template <class T>
void guide_sample(GuideFamily family, std::size_t dim, std::span<const T> params, std::span<const double> eps,
                  std::span<T> out) {
  using std::exp;
  const auto mu = params.first(dim);
  if (family == GuideFamily::Diagonal) {
    for (std::size_t i = 0; i < dim; ++i) out[i] = mu[i] + exp(params[dim + i]) * eps[i];
    return;
  }
  const auto l = params.subspan(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    T acc = exp(l[packed(i, i)]) * eps[i];
    if (i > 0) acc = ad::dot(l.subspan(packed(i, 0), i), eps.first(i)) + acc;
    out[i] = mu[i] + acc;
  }
}

template <class T>
T guide_log_density(GuideFamily family, std::size_t dim, std::span<const T> params, std::span<const T> z) {
  using std::exp;
  const auto mu = params.first(dim);
  small_vec<T> u(dim);  // L^{-1} (z - mu)
  T log_det = 0.0;
  if (family == GuideFamily::Diagonal) {
    const auto log_sigma = params.subspan(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) u[i] = (z[i] - mu[i]) / exp(log_sigma[i]);
    log_det = ad::sum(log_sigma);
  } else {
    const auto l = params.subspan(dim);
    small_vec<T> diag(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      T r = z[i] - mu[i];
      if (i > 0) r = r - ad::dot(l.subspan(packed(i, 0), i), std::span<const T>(u.data(), i));
      u[i] = r / exp(l[packed(i, i)]);
      diag[i] = l[packed(i, i)];
    }
    log_det = ad::sum(view(diag));
  }
  return -0.5 * ad::norm2(view(u)) - log_det - static_cast<double>(dim) * kHalfLog2Pi;
}

template <class T>
T standard_normal_log_prior(std::span<const T> z) {
  return -0.5 * ad::norm2(z) - static_cast<double>(z.size()) * kHalfLog2Pi;
}

#define NIFF_GUIDE_INSTANTIATE(T)                                                                           \
  template void guide_sample<T>(GuideFamily, std::size_t, std::span<const T>, std::span<const double>,     \
                                std::span<T>);                                                              \
  template T guide_log_density<T>(GuideFamily, std::size_t, std::span<const T>, std::span<const T>);        \
  template T standard_normal_log_prior<T>(std::span<const T>);
NIFF_GUIDE_INSTANTIATE(double)
NIFF_GUIDE_INSTANTIATE(ad::Var)

}  // namespace niff
