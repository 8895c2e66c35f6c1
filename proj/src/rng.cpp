#include "niff/rng.hpp"

#include <algorithm>

#include "niff/error.hpp"

namespace niff {

std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

Rng Rng::stream(std::uint64_t master_seed, std::uint64_t stream_id) {
  return Rng(mix_seed(master_seed) ^ mix_seed(stream_id + 0x632be59bd9b4e019ULL));
}

double Rng::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

double Rng::gaussian() { return normal_(engine_); }

void Rng::fill_gaussian(std::span<double> out) {
  for (double& x : out) x = normal_(engine_);
}

std::vector<double> Rng::gaussian_vector(std::size_t n) {
  std::vector<double> out(n);
  fill_gaussian(out);
  return out;
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) throw DomainError("cannot draw " + std::to_string(k) + " distinct items from " + std::to_string(n));
  std::vector<std::size_t> out;
  out.reserve(k);
  if (2 * k > n) {
    // Dense case: partial Fisher-Yates.
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(pool[i], pool[pick(engine_)]);
      out.push_back(pool[i]);
    }
    return out;
  }
  // Sparse case: rejection against the (short) list drawn so far.
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  while (out.size() < k) {
    const std::size_t c = pick(engine_);
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  return out;
}

}  // namespace niff
