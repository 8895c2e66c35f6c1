#pragma once

// Gaussian variational families with reparameterized sampling.
//
// Parameters are stored flat so that optimizers and the tape see one vector:
//   diagonal:  (mu[n], log_sigma[n])
//   full rank: (mu[n], packed lower-triangular L by rows, diagonal as log)

#include <span>
#include <string>
#include <vector>

#include "niff/diffengine.hpp"

namespace niff {

enum class GuideFamily { Diagonal, FullRank };

std::size_t guide_param_count(GuideFamily family, std::size_t dim) noexcept;

struct Guide {
  GuideFamily family = GuideFamily::Diagonal;
  std::size_t dim = 0;
  std::vector<double> params;

  /// sigma_i = scale for every entry.
  static Guide diagonal(std::vector<double> mean, double scale);
  /// L = scale * I.
  static Guide full_rank(std::vector<double> mean, double scale);

  std::span<const double> mean() const { return {params.data(), dim}; }
  std::span<double> mean() { return {params.data(), dim}; }
  /// Dense lower-triangular factor (row-major dim x dim).
  std::vector<double> cholesky() const;
  std::vector<double> covariance() const;
  std::vector<double> stddev() const;

  std::vector<double> sample(std::span<const double> eps) const;
  double log_density(std::span<const double> z) const;
};

/// mu + sigma * eps or mu + L eps.
template <class T>
void guide_sample(GuideFamily family, std::size_t dim, std::span<const T> params, std::span<const double> eps,
                  std::span<T> out);

/// Exact Gaussian log-density at z.
template <class T>
T guide_log_density(GuideFamily family, std::size_t dim, std::span<const T> params, std::span<const T> z);

/// sum_i -z_i^2 / 2 - log(2 pi) / 2.
template <class T>
T standard_normal_log_prior(std::span<const T> z);

#define NIFF_GUIDE_EXTERN(T)                                                                                   \
  extern template void guide_sample<T>(GuideFamily, std::size_t, std::span<const T>, std::span<const double>, \
                                       std::span<T>);                                                          \
  extern template T guide_log_density<T>(GuideFamily, std::size_t, std::span<const T>, std::span<const T>);    \
  extern template T standard_normal_log_prior<T>(std::span<const T>);
NIFF_GUIDE_EXTERN(double)
NIFF_GUIDE_EXTERN(ad::Var)
#undef NIFF_GUIDE_EXTERN

}  // namespace niff
