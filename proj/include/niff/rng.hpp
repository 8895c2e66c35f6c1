#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace niff {

/// Seeded random source. Independent streams are derived from a master seed
/// and a stream id, so adding streams never shifts an existing stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng stream(std::uint64_t master_seed, std::uint64_t stream_id);

  double uniform(double lo, double hi);
  double gaussian();
  void fill_gaussian(std::span<double> out);
  std::vector<double> gaussian_vector(std::size_t n);

  /// `k` distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// SplitMix64 finalizer; used to decorrelate derived seeds.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

}  // namespace niff
