#pragma once

#include <catch2/catch_amalgamated.hpp>
#include <vector>

#include "mpcg/core/rng.hpp"
#include "mpcg/core/tensor.hpp"

namespace testutil {

using mpcg::Rng;
using mpcg::Shape;
using mpcg::Tensor;

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  Rng rng(seed);
  Tensor t(s);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<float>(rng.uniform(lo, hi));
  }
  return t;
}

inline Tensor random_normal(Shape s, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  Tensor t(s);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<float>(rng.normal() * stddev);
  }
  return t;
}

/// Shuffled arithmetic grid over [lo, hi]: every pairwise gap is at least
/// (hi-lo)/numel, so max-selection ops keep a stable argmax under
/// finite-difference probes with 2h below that gap.
inline Tensor spread_tensor(Shape s, std::uint64_t seed, double lo = -1.2,
                            double hi = 1.2) {
  Rng rng(seed);
  Tensor t(s);
  const std::int64_t n = t.numel();
  std::vector<std::int64_t> perm(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  for (std::int64_t i = n - 1; i > 0; --i) {
    const std::int64_t j = rng.uniform_int(0, static_cast<int>(i));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  for (std::int64_t i = 0; i < n; ++i) {
    t.data()[i] = static_cast<float>(
        lo + (hi - lo) * (static_cast<double>(perm[static_cast<size_t>(i)]) + 0.5) /
                 static_cast<double>(n));
  }
  return t;
}

inline double min_pair_gap(const Tensor& t) {
  std::vector<float> v(t.data(), t.data() + t.numel());
  std::sort(v.begin(), v.end());
  double gap = std::numeric_limits<double>::infinity();
  for (size_t i = 1; i < v.size(); ++i) {
    gap = std::min(gap, static_cast<double>(v[i]) - v[i - 1]);
  }
  return gap;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst,
                     std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  }
  return worst;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

}  // namespace testutil
