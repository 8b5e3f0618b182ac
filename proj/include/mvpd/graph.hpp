#pragma once

// Dense-tensor computation graph with reverse-mode gradients.
//
// A Graph is an append-only list of nodes in topological order. Leaves are
// named parameters (trainable), named inputs (bindable, not trainable) or
// anonymous constants. When every input of a node already carries a value the
// node is evaluated at construction time, so a graph built from concrete
// tensors can be differentiated without a second forward pass. evaluate() and
// gradients() replay the graph with optional binding overrides and never
// mutate it.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvpd/tensor.hpp"

namespace mvpd {

class MissingBindingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RankError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Bindings = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op : std::uint8_t {
  Parameter,
  Input,
  Constant,
  Add,
  Multiply,
  MatMul,
  Affine,
  Relu,
  Softmax,
  Log,
  Sum,
  Mean,
  Abs,
  Concat,
  Scale,
  StopGradient,
};

const char* op_name(Op op);

struct Node {
  Op op = Op::Constant;
  std::vector<NodeId> inputs;
  Shape shape;
  std::string name;          // leaves only
  double attr = 0.0;         // Scale factor, Log floor
  std::size_t axis = 0;      // Concat axis
  bool requires_grad = false;
};

class Graph {
 public:
  NodeId parameter(std::string name, Tensor value);
  NodeId parameter(std::string name, Shape shape);
  NodeId input(std::string name, Tensor value);
  NodeId input(std::string name, Shape shape);
  NodeId constant(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId multiply(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  /// x[m,k] * w[k,n] + b[n], bias broadcast over rows.
  NodeId affine(NodeId x, NodeId w, NodeId b);
  NodeId relu(NodeId x);
  /// Softmax along the last axis.
  NodeId softmax(NodeId x);
  /// log(max(x, floor)). With floor == 0 the input must be strictly positive.
  NodeId log(NodeId x, double floor = 0.0);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId abs(NodeId x);
  NodeId concat(NodeId a, NodeId b, std::size_t axis);
  NodeId scale(NodeId x, double factor);
  /// Identity in the forward pass; blocks every gradient through this edge.
  NodeId stop_gradient(NodeId x);

  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  const Shape& shape(NodeId id) const { return node(id).shape; }
  std::size_t size() const { return nodes_.size(); }

  bool has_value(NodeId id) const { return values_.at(id.index).has_value(); }
  /// Construction-time value; throws MissingBindingError if not available.
  const Tensor& value(NodeId id) const;

  /// Names of all parameter leaves, in construction order.
  std::vector<std::string> parameter_names() const;
  std::optional<NodeId> find_leaf(const std::string& name) const;

 private:
  NodeId push(Node node, std::optional<Tensor> value);
  NodeId leaf(Op op, std::string name, Shape shape, std::optional<Tensor> value);
  NodeId unary(Op op, NodeId x, Shape shape, double attr = 0.0);

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> values_;
  std::map<std::string, NodeId> leaves_;
};

/// Forward values of every node needed for `output` (others left empty).
std::vector<Tensor> forward_values(const Graph& graph, const Bindings& bindings, NodeId output);

Tensor evaluate(const Graph& graph, const Bindings& bindings, NodeId output);

/// d(output)/d(parameter) for every parameter leaf, keyed by parameter name.
/// Parameters that do not reach the output get an all-zero gradient.
Gradients gradients(const Graph& graph, const Bindings& bindings, NodeId output);

/// Backward pass over precomputed forward values (as returned by forward_values).
Gradients backward(const Graph& graph, const std::vector<Tensor>& values, NodeId output);

}  // namespace mvpd
