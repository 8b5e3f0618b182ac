#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mvpd {

inline constexpr double kGradientTolerance = 1e-6;
/// Central-difference step used by the suite.
inline constexpr double kGradientStep = 1e-4;

struct GradientCase {
  std::string name;
  std::size_t points = 0;    // smooth points checked
  std::size_t attempts = 0;  // draws, including ones rejected for sitting near a kink
  double max_relative_error = 0.0;
  std::string worst_parameter;
  double worst_gradient = 0.0;  // |analytic| at the worst coordinate
  double worst_loss = 0.0;      // |output| at the point holding it

  /// Relative error that round-off alone can produce at the worst
  /// coordinate: machine epsilon * |loss| / (step * |gradient|).
  double roundoff_floor() const;
};

struct GradientSuiteReport {
  std::vector<GradientCase> cases;
  double max_relative_error() const;
  bool passed(double tolerance = kGradientTolerance) const;
};

/// Finite-difference check of every graph primitive, of the fused-prediction
/// cross-entropy with respect to all model parameters, and of the total loss
/// with the view-aware contrastive term, each at `points` seeded random
/// points where the check is reliable.
GradientSuiteReport run_gradient_suite(std::uint64_t seed, std::size_t points = 50);

}  // namespace mvpd
