#pragma once

// Sort-based reference for percentile saliency.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "nrr/image.hpp"

namespace test_support {

/// 10x10 single-channel residual holding the values 1..100 in shuffled order.
inline nrr::Image<float> grid_1_to_100() {
  std::vector<float> v(100);
  std::iota(v.begin(), v.end(), 1.f);
  std::shuffle(v.begin(), v.end(), std::mt19937(7));
  nrr::Image<float> im(10, 10, 1);
  std::copy(v.begin(), v.end(), im.data().begin());
  return im;
}

/// Nearest rank with integer percentiles: the ceil(p N / 100)-th smallest.
template <class T>
T oracle_percentile(std::vector<T> v, int p) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  std::size_t rank = (static_cast<std::size_t>(p) * n + 99) / 100;
  if (rank == 0) rank = 1;
  return v[rank - 1];
}

template <class T>
std::vector<T> oracle_pixel_l1(const std::vector<std::vector<T>>& channels) {
  std::vector<T> y(channels[0].size(), T(0));
  for (const auto& ch : channels)
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += std::abs(ch[i]);
  return y;
}

template <class T>
T oracle_band_sum(const std::vector<T>& y, int p_min, int p_max) {
  const T lo = oracle_percentile(y, p_min), hi = oracle_percentile(y, p_max);
  T s = 0;
  for (T v : y)
    if (v >= lo && v <= hi) s += v;
  return s;
}

}  // namespace test_support
