#include "mvpd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace mvpd {

const char* op_name(Op op) {
  switch (op) {
    case Op::Parameter: return "parameter";
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Multiply: return "multiply";
    case Op::MatMul: return "matmul";
    case Op::Affine: return "affine";
    case Op::Relu: return "relu";
    case Op::Softmax: return "softmax";
    case Op::Log: return "log";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Abs: return "abs";
    case Op::Concat: return "concat";
    case Op::Scale: return "scale";
    case Op::StopGradient: return "stop_gradient";
  }
  return "?";
}

namespace {

bool is_leaf(Op op) { return op == Op::Parameter || op == Op::Input || op == Op::Constant; }

void require_rank2(const Shape& s, const char* what) {
  if (s.size() != 2) throw ShapeError(std::string(what) + " needs a rank-2 operand, got " + to_string(s));
}

// ---------------------------------------------------------------------------
// Forward kernels

Tensor matmul_forward(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out({m, n});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor softmax_forward(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * cols;
    double* o = out.data().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return out;
}

Tensor concat_forward(const Tensor& a, const Tensor& b, std::size_t axis, const Shape& out_shape) {
  Tensor out(out_shape);
  if (axis == 0) {
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
  }
  const std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * ca, ca, out.data().data() + r * (ca + cb));
    std::copy_n(b.data().data() + r * cb, cb, out.data().data() + r * (ca + cb) + ca);
  }
  return out;
}

Tensor compute(const Node& node, const std::vector<const Tensor*>& in) {
  switch (node.op) {
    case Op::Add: {
      Tensor out = *in[0];
      auto b = in[1]->data();
      auto o = out.data();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i];
      return out;
    }
    case Op::Multiply: {
      Tensor out = *in[0];
      auto b = in[1]->data();
      auto o = out.data();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] *= b[i];
      return out;
    }
    case Op::MatMul:
      return matmul_forward(*in[0], *in[1]);
    case Op::Affine: {
      Tensor out = matmul_forward(*in[0], *in[1]);
      const std::size_t n = out.shape()[1];
      auto b = in[2]->data();
      auto o = out.data();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i % n];
      return out;
    }
    case Op::Relu: {
      Tensor out = *in[0];
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case Op::Softmax:
      return softmax_forward(*in[0]);
    case Op::Log: {
      Tensor out = *in[0];
      for (double& v : out.data()) {
        const double x = std::max(v, node.attr);
        if (!(x > 0.0)) throw std::domain_error("log of non-positive value");
        v = std::log(x);
      }
      return out;
    }
    case Op::Sum:
    case Op::Mean: {
      double total = 0.0;
      for (double v : in[0]->data()) total += v;
      if (node.op == Op::Mean) total /= static_cast<double>(in[0]->size());
      return Tensor::scalar(total);
    }
    case Op::Abs: {
      Tensor out = *in[0];
      for (double& v : out.data()) v = std::fabs(v);
      return out;
    }
    case Op::Concat:
      return concat_forward(*in[0], *in[1], node.axis, node.shape);
    case Op::Scale: {
      Tensor out = *in[0];
      for (double& v : out.data()) v *= node.attr;
      return out;
    }
    case Op::StopGradient:
      return *in[0];
    case Op::Parameter:
    case Op::Input:
    case Op::Constant:
      break;
  }
  throw std::logic_error("compute() called on a leaf");
}

// ---------------------------------------------------------------------------
// Backward helpers

void accumulate(std::vector<Tensor>& grads, NodeId id, const Shape& shape, auto&& fill) {
  Tensor& g = grads[id.index];
  if (g.empty()) g = Tensor(shape);
  fill(g.data());
}

std::vector<bool> needed_nodes(const Graph& graph, NodeId output) {
  std::vector<bool> needed(graph.size(), false);
  needed.at(output.index) = true;
  for (std::size_t i = output.index + 1; i-- > 0;) {
    if (!needed[i]) continue;
    for (NodeId in : graph.node(NodeId{static_cast<std::uint32_t>(i)}).inputs) needed[in.index] = true;
  }
  return needed;
}

struct ForwardPass {
  std::vector<Tensor> storage;
  std::vector<const Tensor*> values;
};

ForwardPass run_forward(const Graph& graph, const Bindings& bindings, NodeId output) {
  if (output.index >= graph.size()) throw std::out_of_range("output node not in graph");
  const auto needed = needed_nodes(graph, output);
  ForwardPass pass;
  pass.storage.resize(output.index + 1);
  pass.values.assign(output.index + 1, nullptr);
  std::vector<bool> dirty(output.index + 1, false);

  for (std::uint32_t i = 0; i <= output.index; ++i) {
    if (!needed[i]) continue;
    const NodeId id{i};
    const Node& node = graph.node(id);
    if (is_leaf(node.op)) {
      if (node.op != Op::Constant) {
        auto it = bindings.find(node.name);
        if (it != bindings.end()) {
          if (it->second.shape() != node.shape)
            throw ShapeError("binding '" + node.name + "' has shape " + to_string(it->second.shape()) +
                             ", expected " + to_string(node.shape));
          pass.values[i] = &it->second;
          dirty[i] = true;
          continue;
        }
      }
      if (!graph.has_value(id)) throw MissingBindingError("no binding for leaf '" + node.name + "'");
      pass.values[i] = &graph.value(id);
      continue;
    }
    bool any_dirty = false;
    for (NodeId in : node.inputs) any_dirty = any_dirty || dirty[in.index];
    if (!any_dirty && graph.has_value(id)) {
      pass.values[i] = &graph.value(id);
      continue;
    }
    std::vector<const Tensor*> in;
    in.reserve(node.inputs.size());
    for (NodeId n : node.inputs) in.push_back(pass.values[n.index]);
    pass.storage[i] = compute(node, in);
    pass.values[i] = &pass.storage[i];
    dirty[i] = true;
  }
  return pass;
}

Gradients backward_impl(const Graph& graph, const std::vector<const Tensor*>& values, NodeId output) {
  if (element_count(graph.shape(output)) != 1)
    throw RankError("gradients need a scalar output, got shape " + to_string(graph.shape(output)));

  std::vector<Tensor> grads(output.index + 1);
  grads[output.index] = Tensor::filled(graph.shape(output), 1.0);

  for (std::uint32_t i = output.index + 1; i-- > 0;) {
    const Node& node = graph.node(NodeId{i});
    if (!node.requires_grad || grads[i].empty() || is_leaf(node.op)) continue;
    const Tensor& g = grads[i];
    const auto gd = g.data();
    const auto& ins = node.inputs;
    auto wants = [&](std::size_t k) { return graph.node(ins[k]).requires_grad; };
    auto val = [&](std::size_t k) -> const Tensor& { return *values[ins[k].index]; };

    switch (node.op) {
      case Op::Add:
        for (std::size_t k = 0; k < 2; ++k)
          if (wants(k))
            accumulate(grads, ins[k], val(k).shape(), [&](std::span<double> d) {
              for (std::size_t j = 0; j < d.size(); ++j) d[j] += gd[j];
            });
        break;
      case Op::Multiply:
        for (std::size_t k = 0; k < 2; ++k)
          if (wants(k)) {
            const auto other = val(1 - k).data();
            accumulate(grads, ins[k], val(k).shape(), [&](std::span<double> d) {
              for (std::size_t j = 0; j < d.size(); ++j) d[j] += gd[j] * other[j];
            });
          }
        break;
      case Op::MatMul:
      case Op::Affine: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        const std::size_t m = a.shape()[0], kk = a.shape()[1], n = b.shape()[1];
        const double* A = a.data().data();
        const double* B = b.data().data();
        if (wants(0))
          accumulate(grads, ins[0], a.shape(), [&](std::span<double> d) {
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t p = 0; p < kk; ++p) {
                double acc = 0.0;
                const double* grow = gd.data() + r * n;
                const double* brow = B + p * n;
                for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                d[r * kk + p] += acc;
              }
          });
        if (wants(1))
          accumulate(grads, ins[1], b.shape(), [&](std::span<double> d) {
            for (std::size_t r = 0; r < m; ++r) {
              const double* grow = gd.data() + r * n;
              for (std::size_t p = 0; p < kk; ++p) {
                const double av = A[r * kk + p];
                if (av == 0.0) continue;
                double* drow = d.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
              }
            }
          });
        if (node.op == Op::Affine && wants(2))
          accumulate(grads, ins[2], val(2).shape(), [&](std::span<double> d) {
            for (std::size_t j = 0; j < gd.size(); ++j) d[j % n] += gd[j];
          });
        break;
      }
      case Op::Relu:
        if (wants(0)) {
          const auto x = val(0).data();
          accumulate(grads, ins[0], val(0).shape(), [&](std::span<double> d) {
            for (std::size_t j = 0; j < d.size(); ++j)
              if (x[j] > 0.0) d[j] += gd[j];
          });
        }
        break;
      case Op::Softmax:
        if (wants(0)) {
          const Tensor& y = *values[i];
          const std::size_t cols = y.shape().back();
          const std::size_t rows = y.size() / cols;
          const auto yd = y.data();
          accumulate(grads, ins[0], val(0).shape(), [&](std::span<double> d) {
            for (std::size_t r = 0; r < rows; ++r) {
              double dot = 0.0;
              for (std::size_t c = 0; c < cols; ++c) dot += gd[r * cols + c] * yd[r * cols + c];
              for (std::size_t c = 0; c < cols; ++c)
                d[r * cols + c] += yd[r * cols + c] * (gd[r * cols + c] - dot);
            }
          });
        }
        break;
      case Op::Log:
        if (wants(0)) {
          const auto x = val(0).data();
          accumulate(grads, ins[0], val(0).shape(), [&](std::span<double> d) {
            for (std::size_t j = 0; j < d.size(); ++j)
              if (x[j] > node.attr) d[j] += gd[j] / x[j];
          });
        }
        break;
      case Op::Sum:
      case Op::Mean:
        if (wants(0)) {
          const double s = node.op == Op::Mean ? gd[0] / static_cast<double>(val(0).size()) : gd[0];
          accumulate(grads, ins[0], val(0).shape(), [&](std::span<double> d) {
            for (double& v : d) v += s;
          });
        }
        break;
      case Op::Abs:
        if (wants(0)) {
          const auto x = val(0).data();
          accumulate(grads, ins[0], val(0).shape(), [&](std::span<double> d) {
            for (std::size_t j = 0; j < d.size(); ++j) {
              if (x[j] > 0.0) d[j] += gd[j];
              else if (x[j] < 0.0) d[j] -= gd[j];
            }
          });
        }
        break;
      case Op::Concat: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        if (node.axis == 0) {
          if (wants(0))
            accumulate(grads, ins[0], a.shape(), [&](std::span<double> d) {
              for (std::size_t j = 0; j < d.size(); ++j) d[j] += gd[j];
            });
          if (wants(1))
            accumulate(grads, ins[1], b.shape(), [&](std::span<double> d) {
              for (std::size_t j = 0; j < d.size(); ++j) d[j] += gd[a.size() + j];
            });
        } else {
          const std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
          if (wants(0))
            accumulate(grads, ins[0], a.shape(), [&](std::span<double> d) {
              for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < ca; ++c) d[r * ca + c] += gd[r * (ca + cb) + c];
            });
          if (wants(1))
            accumulate(grads, ins[1], b.shape(), [&](std::span<double> d) {
              for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cb; ++c) d[r * cb + c] += gd[r * (ca + cb) + ca + c];
            });
        }
        break;
      }
      case Op::Scale:
        if (wants(0))
          accumulate(grads, ins[0], val(0).shape(), [&](std::span<double> d) {
            for (std::size_t j = 0; j < d.size(); ++j) d[j] += node.attr * gd[j];
          });
        break;
      case Op::StopGradient:
      case Op::Parameter:
      case Op::Input:
      case Op::Constant:
        break;
    }
  }

  Gradients out;
  for (std::uint32_t i = 0; i < graph.size(); ++i) {
    const Node& node = graph.node(NodeId{i});
    if (node.op != Op::Parameter) continue;
    if (i <= output.index && !grads[i].empty())
      out.insert_or_assign(node.name, std::move(grads[i]));
    else
      out.insert_or_assign(node.name, Tensor(node.shape));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph construction

NodeId Graph::push(Node node, std::optional<Tensor> value) {
  if (!value && !is_leaf(node.op)) {
    bool ready = std::all_of(node.inputs.begin(), node.inputs.end(),
                             [&](NodeId in) { return values_[in.index].has_value(); });
    if (ready) {
      std::vector<const Tensor*> in;
      for (NodeId n : node.inputs) in.push_back(&*values_[n.index]);
      value = compute(node, in);
    }
  }
  nodes_.push_back(std::move(node));
  values_.push_back(std::move(value));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::leaf(Op op, std::string name, Shape shape, std::optional<Tensor> value) {
  if (op != Op::Constant) {
    if (name.empty()) throw std::invalid_argument("named leaf needs a non-empty name");
    if (leaves_.count(name)) throw std::invalid_argument("duplicate leaf name '" + name + "'");
  }
  if (value && value->shape() != shape) throw ShapeError("leaf value shape mismatch");
  (void)Tensor(shape);  // validates the shape
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.name = name;
  n.requires_grad = op == Op::Parameter;
  NodeId id = push(std::move(n), std::move(value));
  if (op != Op::Constant) leaves_.emplace(std::move(name), id);
  return id;
}

NodeId Graph::parameter(std::string name, Tensor value) {
  Shape s = value.shape();
  return leaf(Op::Parameter, std::move(name), std::move(s), std::move(value));
}
NodeId Graph::parameter(std::string name, Shape shape) {
  return leaf(Op::Parameter, std::move(name), std::move(shape), std::nullopt);
}
NodeId Graph::input(std::string name, Tensor value) {
  Shape s = value.shape();
  return leaf(Op::Input, std::move(name), std::move(s), std::move(value));
}
NodeId Graph::input(std::string name, Shape shape) {
  return leaf(Op::Input, std::move(name), std::move(shape), std::nullopt);
}
NodeId Graph::constant(Tensor value) {
  Shape s = value.shape();
  return leaf(Op::Constant, {}, std::move(s), std::move(value));
}

NodeId Graph::unary(Op op, NodeId x, Shape shape, double attr) {
  Node n;
  n.op = op;
  n.inputs = {x};
  n.shape = std::move(shape);
  n.attr = attr;
  n.requires_grad = op != Op::StopGradient && node(x).requires_grad;
  return push(std::move(n), std::nullopt);
}

NodeId Graph::add(NodeId a, NodeId b) {
  if (shape(a) != shape(b))
    throw ShapeError("add: shapes " + to_string(shape(a)) + " and " + to_string(shape(b)) + " differ");
  Node n;
  n.op = Op::Add;
  n.inputs = {a, b};
  n.shape = shape(a);
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n), std::nullopt);
}

NodeId Graph::multiply(NodeId a, NodeId b) {
  if (shape(a) != shape(b))
    throw ShapeError("multiply: shapes " + to_string(shape(a)) + " and " + to_string(shape(b)) + " differ");
  Node n;
  n.op = Op::Multiply;
  n.inputs = {a, b};
  n.shape = shape(a);
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n), std::nullopt);
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  require_rank2(shape(a), "matmul");
  require_rank2(shape(b), "matmul");
  if (shape(a)[1] != shape(b)[0])
    throw ShapeError("matmul: inner dimensions of " + to_string(shape(a)) + " and " + to_string(shape(b)) +
                     " differ");
  Node n;
  n.op = Op::MatMul;
  n.inputs = {a, b};
  n.shape = {shape(a)[0], shape(b)[1]};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n), std::nullopt);
}

NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
  require_rank2(shape(x), "affine");
  require_rank2(shape(w), "affine");
  if (shape(x)[1] != shape(w)[0])
    throw ShapeError("affine: input " + to_string(shape(x)) + " does not fit weight " + to_string(shape(w)));
  if (element_count(shape(b)) != shape(w)[1] || shape(b).back() != shape(w)[1])
    throw ShapeError("affine: bias " + to_string(shape(b)) + " does not fit weight " + to_string(shape(w)));
  Node n;
  n.op = Op::Affine;
  n.inputs = {x, w, b};
  n.shape = {shape(x)[0], shape(w)[1]};
  n.requires_grad = node(x).requires_grad || node(w).requires_grad || node(b).requires_grad;
  return push(std::move(n), std::nullopt);
}

NodeId Graph::relu(NodeId x) { return unary(Op::Relu, x, shape(x)); }
NodeId Graph::softmax(NodeId x) {
  if (shape(x).size() > 2) throw ShapeError("softmax supports rank 1 or 2");
  return unary(Op::Softmax, x, shape(x));
}
NodeId Graph::log(NodeId x, double floor) {
  if (floor < 0.0) throw std::invalid_argument("log floor must be non-negative");
  return unary(Op::Log, x, shape(x), floor);
}
NodeId Graph::sum(NodeId x) { return unary(Op::Sum, x, {1}); }
NodeId Graph::mean(NodeId x) { return unary(Op::Mean, x, {1}); }
NodeId Graph::abs(NodeId x) { return unary(Op::Abs, x, shape(x)); }
NodeId Graph::scale(NodeId x, double factor) { return unary(Op::Scale, x, shape(x), factor); }
NodeId Graph::stop_gradient(NodeId x) { return unary(Op::StopGradient, x, shape(x)); }

NodeId Graph::concat(NodeId a, NodeId b, std::size_t axis) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  if (sa.size() != sb.size() || sa.size() > 2 || axis >= sa.size())
    throw ShapeError("concat: incompatible ranks " + to_string(sa) + ", " + to_string(sb) + " on axis " +
                     std::to_string(axis));
  Shape out = sa;
  for (std::size_t d = 0; d < sa.size(); ++d) {
    if (d == axis) out[d] = sa[d] + sb[d];
    else if (sa[d] != sb[d])
      throw ShapeError("concat: shapes " + to_string(sa) + " and " + to_string(sb) + " disagree off-axis");
  }
  Node n;
  n.op = Op::Concat;
  n.inputs = {a, b};
  n.shape = std::move(out);
  n.axis = axis;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n), std::nullopt);
}

const Tensor& Graph::value(NodeId id) const {
  const auto& v = values_.at(id.index);
  if (!v) throw MissingBindingError("node " + std::to_string(id.index) + " (" + op_name(node(id).op) +
                                    ") has no construction-time value");
  return *v;
}

std::vector<std::string> Graph::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& n : nodes_)
    if (n.op == Op::Parameter) names.push_back(n.name);
  return names;
}

std::optional<NodeId> Graph::find_leaf(const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------

std::vector<Tensor> forward_values(const Graph& graph, const Bindings& bindings, NodeId output) {
  ForwardPass pass = run_forward(graph, bindings, output);
  std::vector<Tensor> out(pass.values.size());
  for (std::size_t i = 0; i < pass.values.size(); ++i)
    if (pass.values[i]) out[i] = *pass.values[i];
  return out;
}

Tensor evaluate(const Graph& graph, const Bindings& bindings, NodeId output) {
  ForwardPass pass = run_forward(graph, bindings, output);
  return *pass.values[output.index];
}

Gradients gradients(const Graph& graph, const Bindings& bindings, NodeId output) {
  if (element_count(graph.shape(output)) != 1)
    throw RankError("gradients need a scalar output, got shape " + to_string(graph.shape(output)));
  ForwardPass pass = run_forward(graph, bindings, output);
  return backward_impl(graph, pass.values, output);
}

Gradients backward(const Graph& graph, const std::vector<Tensor>& values, NodeId output) {
  std::vector<const Tensor*> ptrs(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) ptrs[i] = &values[i];
  return backward_impl(graph, ptrs, output);
}

}  // namespace mvpd
