#pragma once

#include <cstddef>
#include <string>

#include "mvpd/graph.hpp"

namespace mvpd {

struct GradCheckResult {
  double max_relative_error = 0.0;
  /// False when a perturbed evaluation crossed a kink of abs/relu/clamped log,
  /// or the base point sits exactly on one.
  bool reliable = true;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
};

/// Central finite differences against analytic gradients for every element of
/// every parameter leaf. Relative error per element is
/// |a - n| / (|a| + |n| + 1e-12); the maximum is reported.
GradCheckResult finite_difference_check(const Graph& graph, const Bindings& bindings, NodeId output,
                                        double step = 1e-5);

}  // namespace mvpd
