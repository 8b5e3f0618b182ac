#include "mvpd/losses.hpp"

#include <cmath>
#include <numeric>

namespace mvpd {

GroupSplit partition_batch(std::span<const ViewWeights> weights) {
  GroupSplit split;
  for (std::size_t i = 0; i < weights.size(); ++i)
    (weights[i].w_t >= weights[i].w_l ? split.ge : split.le).push_back(i);
  return split;
}

double cross_entropy(const Tensor& fused, const Tensor& label) {
  if (fused.size() != label.size()) throw ShapeError("cross_entropy: size mismatch");
  double loss = 0.0;
  for (std::size_t c = 0; c < fused.size(); ++c) loss -= label[c] * std::log(std::max(fused[c], kLogClamp));
  return loss;
}

double view_distance(const ViewFeatures& i, const ViewFeatures& j) {
  if (i.f_t.size() != j.f_t.size() || i.f_l.size() != j.f_l.size() || i.f_t.size() != i.f_l.size())
    throw ShapeError("view_distance: feature dimensions differ");
  double d = 0.0;
  for (std::size_t k = 0; k < i.f_t.size(); ++k) d += std::fabs(i.f_t[k] - j.f_t[k]);
  for (std::size_t k = 0; k < i.f_l.size(); ++k) d += std::fabs(i.f_l[k] - j.f_l[k]);
  return d;
}

double total_loss(double ce, double vac, double lambda) { return ce + lambda * vac; }

// ---------------------------------------------------------------------------

NodeId cross_entropy_node(Graph& g, NodeId fused, NodeId labels) {
  const double rows = static_cast<double>(g.shape(fused)[0]);
  NodeId picked = g.multiply(labels, g.log(fused, kLogClamp));
  return g.scale(g.sum(picked), -1.0 / rows);
}

NodeId grouped_distance_node(Graph& g, NodeId f_t, NodeId f_l,
                             const std::vector<std::vector<std::size_t>>& groups, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("contrastive epsilon must be positive");
  const std::size_t batch = g.shape(f_t)[0];
  std::size_t pairs = 0;
  for (const auto& grp : groups) pairs += grp.size() * (grp.size() - (grp.empty() ? 0 : 1)) / 2;
  if (pairs == 0) return g.constant(Tensor::scalar(0.0));

  // Row k of `diff` picks f^i - f^j for the k-th unordered pair; `coeff`
  // carries that pair's group normaliser.
  Tensor diff({pairs, batch});
  Tensor coeff({1, pairs});
  std::size_t k = 0;
  for (const auto& grp : groups) {
    const double n = static_cast<double>(grp.size());
    const double norm = 1.0 / (n * (n - 1.0) / 2.0 + epsilon);
    for (std::size_t a = 0; a < grp.size(); ++a)
      for (std::size_t b = a + 1; b < grp.size(); ++b, ++k) {
        if (grp[a] >= batch || grp[b] >= batch) throw std::out_of_range("group index outside batch");
        diff.at(k, grp[a]) += 1.0;
        diff.at(k, grp[b]) -= 1.0;
        coeff.at(0, k) = norm;
      }
  }
  NodeId both = g.concat(f_t, f_l, 1);
  NodeId dist = g.abs(g.matmul(g.constant(std::move(diff)), both));
  return g.sum(g.matmul(g.constant(std::move(coeff)), dist));
}

NodeId vacl_node(Graph& g, NodeId f_t, NodeId f_l, NodeId weights, double epsilon) {
  const Tensor& w = g.value(g.stop_gradient(weights));
  std::vector<ViewWeights> pairs(w.rows());
  for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i] = {w.at(i, 0), w.at(i, 1)};
  GroupSplit split = partition_batch(pairs);
  return grouped_distance_node(g, f_t, f_l, {std::move(split.ge), std::move(split.le)}, epsilon);
}

NodeId ocl_node(Graph& g, NodeId f_t, NodeId f_l, double epsilon) {
  std::vector<std::size_t> all(g.shape(f_t)[0]);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return grouped_distance_node(g, f_t, f_l, {std::move(all)}, epsilon);
}

NodeId total_loss_node(Graph& g, NodeId ce, NodeId contrastive, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
  return g.add(ce, g.scale(contrastive, lambda));
}

// ---------------------------------------------------------------------------

namespace {

struct FeatureNodes {
  Graph graph;
  NodeId f_t, f_l;
};

FeatureNodes feature_graph(const Batch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("batch must not be empty");
  const std::size_t d = batch.features.front().f_t.size();
  Tensor ft({batch.size(), d});
  Tensor fl({batch.size(), d});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& f = batch.features[i];
    if (f.f_t.size() != d || f.f_l.size() != d) throw ShapeError("batch features have inconsistent dimensions");
    std::copy(f.f_t.data().begin(), f.f_t.data().end(), ft.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    std::copy(f.f_l.data().begin(), f.f_l.data().end(), fl.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  FeatureNodes out;
  out.f_t = out.graph.constant(std::move(ft));
  out.f_l = out.graph.constant(std::move(fl));
  return out;
}

}  // namespace

double vacl(const Batch& batch, double epsilon) {
  if (batch.weights.size() != batch.size()) throw ShapeError("batch weights and features differ in count");
  FeatureNodes fn = feature_graph(batch);
  Tensor w({batch.size(), 2});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    w.at(i, 0) = batch.weights[i].w_t;
    w.at(i, 1) = batch.weights[i].w_l;
  }
  NodeId weights = fn.graph.constant(std::move(w));
  return fn.graph.value(vacl_node(fn.graph, fn.f_t, fn.f_l, weights, epsilon))[0];
}

double ocl(const Batch& batch, double epsilon) {
  FeatureNodes fn = feature_graph(batch);
  return fn.graph.value(ocl_node(fn.graph, fn.f_t, fn.f_l, epsilon))[0];
}

}  // namespace mvpd
