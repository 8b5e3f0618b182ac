#pragma once

#include <cstdint>
#include <random>

#include "mvpd/tensor.hpp"

namespace mvpd::testing {

// Seeded value generators for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool coin() { return index(0, 1) == 1; }

  Tensor tensor(Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = uniform(lo, hi);
    return t;
  }

  /// Entries bounded away from zero by `gap`, for ops with a kink at 0.
  Tensor away_from_zero(Shape shape, double gap = 0.05, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = (coin() ? 1.0 : -1.0) * uniform(gap, hi);
    return t;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace mvpd::testing
