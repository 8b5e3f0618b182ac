#include "mvpd/grad_check.hpp"

#include <cmath>

namespace mvpd {

namespace {

int side_of(double x, const Node& node) {
  if (node.op == Op::Log) return x > node.attr ? 1 : 0;
  return (x > 0.0) - (x < 0.0);
}

bool is_kinked(const Node& node) {
  return node.op == Op::Relu || node.op == Op::Abs || (node.op == Op::Log && node.attr > 0.0);
}

bool on_kink(const Graph& graph, const std::vector<Tensor>& values) {
  for (std::uint32_t i = 0; i < values.size(); ++i) {
    const Node& node = graph.node(NodeId{i});
    if (!is_kinked(node) || values[i].empty()) continue;
    const Tensor& x = values[node.inputs[0].index];
    for (double v : x.data()) {
      if (node.op != Op::Log && v == 0.0) return true;
      if (node.op == Op::Log && v == node.attr) return true;
    }
  }
  return false;
}

bool crossed_kink(const Graph& graph, const std::vector<Tensor>& base, const std::vector<Tensor>& moved) {
  for (std::uint32_t i = 0; i < base.size(); ++i) {
    const Node& node = graph.node(NodeId{i});
    if (!is_kinked(node) || base[i].empty()) continue;
    const Tensor& a = base[node.inputs[0].index];
    const Tensor& b = moved[node.inputs[0].index];
    for (std::size_t j = 0; j < a.size(); ++j)
      if (side_of(a[j], node) != side_of(b[j], node)) return true;
  }
  return false;
}

}  // namespace

GradCheckResult finite_difference_check(const Graph& graph, const Bindings& bindings, NodeId output,
                                        double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  const Gradients analytic = gradients(graph, bindings, output);
  const std::vector<Tensor> base = forward_values(graph, bindings, output);

  GradCheckResult result;
  result.reliable = !on_kink(graph, base);

  Bindings probe = bindings;
  for (const auto& name : graph.parameter_names()) {
    const NodeId id = *graph.find_leaf(name);
    if (id.index > output.index) continue;
    const Tensor original = bindings.count(name) ? bindings.at(name) : graph.value(id);
    const Tensor& grad = analytic.at(name);
    Tensor moved = original;
    for (std::size_t j = 0; j < original.size(); ++j) {
      moved[j] = original[j] + step;
      probe.insert_or_assign(name, moved);
      const auto plus = forward_values(graph, probe, output);
      moved[j] = original[j] - step;
      probe.insert_or_assign(name, moved);
      const auto minus = forward_values(graph, probe, output);
      moved[j] = original[j];

      if (crossed_kink(graph, base, plus) || crossed_kink(graph, base, minus)) result.reliable = false;

      const double numeric = (plus[output.index][0] - minus[output.index][0]) / (2.0 * step);
      const double a = grad[j];
      const double err = std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric) + 1e-12);
      ++result.coordinates_checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = name;
        result.worst_index = j;
      }
    }
    probe.insert_or_assign(name, original);
  }
  return result;
}

}  // namespace mvpd
