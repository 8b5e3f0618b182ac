#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "mvpd/graph.hpp"
#include "mvpd/model.hpp"

namespace mvpd {

inline constexpr double kLogClamp = 1e-12;

/// One training batch as seen by the loss functions.
struct Batch {
  std::vector<ViewFeatures> features;
  std::vector<ViewWeights> weights;
  std::vector<std::array<double, 2>> labels;  // soft labels, rows sum to 1

  std::size_t size() const { return features.size(); }
};

/// Samples whose weights favour the transverse view (w_t >= w_l, ties
/// included) and the rest.
struct GroupSplit {
  std::vector<std::size_t> ge;
  std::vector<std::size_t> le;
};

GroupSplit partition_batch(std::span<const ViewWeights> weights);

/// -sum_c label[c] * log(max(fused[c], 1e-12)).
double cross_entropy(const Tensor& fused, const Tensor& label);

/// ||f_t^i - f_t^j||_1 + ||f_l^i - f_l^j||_1.
double view_distance(const ViewFeatures& i, const ViewFeatures& j);

/// Mean over unordered within-group pairs of view_distance, per group,
/// normalised by C(n, 2) + epsilon and summed over the two weight groups.
double vacl(const Batch& batch, double epsilon);
/// Same normaliser with the whole batch as a single group.
double ocl(const Batch& batch, double epsilon);

double total_loss(double ce, double vac, double lambda);

// ---------------------------------------------------------------------------
// Graph forms used by training. Features are [B, D], weights/fused/labels [B, 2].

/// Batch-mean clamped cross-entropy.
NodeId cross_entropy_node(Graph& g, NodeId fused, NodeId labels);

/// Contrastive term over explicit index groups. Gradients flow through the
/// features only.
NodeId grouped_distance_node(Graph& g, NodeId f_t, NodeId f_l,
                             const std::vector<std::vector<std::size_t>>& groups, double epsilon);

/// View-aware contrastive loss. The Ge/Le split is read from the weights
/// through a stop-gradient edge, so the weighting network receives no
/// gradient from this term.
NodeId vacl_node(Graph& g, NodeId f_t, NodeId f_l, NodeId weights, double epsilon);
NodeId ocl_node(Graph& g, NodeId f_t, NodeId f_l, double epsilon);

NodeId total_loss_node(Graph& g, NodeId ce, NodeId contrastive, double lambda);

}  // namespace mvpd
