#pragma once

#include <span>

#include <boost/container/small_vector.hpp>

namespace niff::detail {

/// Inline-capacity scratch buffer for per-evaluation temporaries.
template <class T, std::size_t N = 16>
using small_vec = boost::container::small_vector<T, N>;

template <class T, std::size_t N>
std::span<T> mut(small_vec<T, N>& v) {
  return {v.data(), v.size()};
}
template <class T, std::size_t N>
std::span<const T> view(const small_vec<T, N>& v) {
  return {v.data(), v.size()};
}

}  // namespace niff::detail
