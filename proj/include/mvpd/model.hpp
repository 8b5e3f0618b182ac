#pragma once

// Two-view classifier: one backbone shared by the transverse and longitudinal
// branches, a separate MLP head per view, and a weighting network that maps
// the concatenated view features to a per-sample softmax weight pair used to
// fuse the two head outputs.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mvpd/graph.hpp"
#include "mvpd/tensor.hpp"

namespace mvpd {

class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode : std::uint8_t { SingleT, SingleL, MvcOnly, MvcPawn, MvcPawnOcl, Full };

inline constexpr std::array<Mode, 6> kAllModes = {Mode::SingleT, Mode::SingleL,   Mode::MvcOnly,
                                                  Mode::MvcPawn, Mode::MvcPawnOcl, Mode::Full};

std::string_view mode_name(Mode mode);
/// Throws std::invalid_argument on an unknown name.
Mode parse_mode(std::string_view name);

struct Components {
  bool head_t = false;
  bool head_l = false;
  bool pawn = false;
};
Components components_for(Mode mode);

struct ModelConfig {
  std::size_t image_side = 32;
  std::size_t patch_side = 8;
  std::size_t embed_dim = 64;
  std::size_t feature_dim = 64;
  std::size_t head_hidden = 64;
  std::vector<std::size_t> pawn_hidden = {256, 128, 32};
  std::size_t num_classes = 2;

  std::size_t patches_per_image() const {
    const std::size_t n = image_side / patch_side;
    return n * n;
  }
  std::size_t patch_pixels() const { return patch_side * patch_side; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using ParameterSet = std::map<std::string, Tensor>;

enum class View : std::uint8_t { Transverse, Longitudinal };

struct ViewFeatures {
  Tensor f_t;  // [D]
  Tensor f_l;  // [D]
};

struct ViewWeights {
  double w_t = 0.5;
  double w_l = 0.5;
};

struct Prediction {
  Tensor pred_t;  // [2]
  Tensor pred_l;  // [2]
  Tensor fused;   // [2]
};

struct Model {
  ModelConfig config;
  Mode mode = Mode::Full;
  ParameterSet params;

  Components components() const { return components_for(mode); }
};

namespace param {
// Parameter-name prefixes; every parameter name starts with exactly one.
inline constexpr std::string_view kBackbone = "backbone.";
inline constexpr std::string_view kHeadT = "head_t.";
inline constexpr std::string_view kHeadL = "head_l.";
inline constexpr std::string_view kPawn = "pawn.";
}  // namespace param

/// Parameter names and shapes for a component set, in canonical order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config, Components parts);

/// Glorot-uniform weights, zero biases, drawn in canonical order from `seed`.
Model init_model(const ModelConfig& config, Mode mode, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Graph builders (batched; images are [B, side*side] row-major).

/// Pixels enter the backbone as (x - kPixelMean) * kPixelScale.
inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelScale = 4.0;

/// Splits each image into non-overlapping, normalised patches: [B * P, patch*patch].
Tensor patchify(const Tensor& images, std::size_t image_side, std::size_t patch_side);
/// [B, B * P] averaging matrix over each image's P patch rows.
Tensor pooling_matrix(std::size_t batch, std::size_t patches);

struct LayerNodes {
  NodeId w;
  NodeId b;
};

struct BackboneNodes {
  LayerNodes embed, fc1, fc2;
};

struct HeadNodes {
  LayerNodes fc1, out;
};

struct PawnNodes {
  std::vector<LayerNodes> layers;  // hidden layers followed by the output layer
};

/// patches -> relu(affine) -> mean-pool -> affine -> relu -> affine.
NodeId backbone_features(Graph& g, NodeId patches, NodeId pool, const BackboneNodes& bb);
/// features -> affine -> relu -> affine -> softmax.
NodeId head_probabilities(Graph& g, NodeId features, const HeadNodes& head);
/// softmax(MLP(concat(f_t, f_l))) -> [B, 2] weight pairs.
NodeId pawn_weights_node(Graph& g, NodeId f_t, NodeId f_l, const PawnNodes& pawn);
/// w_t * pred_t + w_l * pred_l, row-wise.
NodeId fuse_node(Graph& g, NodeId pred_t, NodeId pred_l, NodeId weights);

enum class Fusion : std::uint8_t { Fixed, Learned, TransverseOnly, LongitudinalOnly };

Fusion default_fusion(Mode mode);

struct ForwardOptions {
  Fusion fusion = Fusion::Learned;
  /// Parameters whose name starts with one of these prefixes become trainable
  /// leaves; all others enter the graph as inputs.
  std::vector<std::string> trainable_prefixes;
};

struct BatchGraph {
  Graph graph;
  std::size_t batch = 0;
  std::optional<NodeId> f_t, f_l;        // [B, D]
  std::optional<NodeId> pred_t, pred_l;  // [B, 2]
  NodeId weights{};                      // [B, 2]
  NodeId fused{};                        // [B, 2]
};

BatchGraph build_forward(const Model& model, const Tensor& images_t, const Tensor& images_l,
                         const ForwardOptions& options);

// ---------------------------------------------------------------------------
// Single-sample operations.

Tensor extract_features(const Tensor& image, const ModelConfig& config, const ParameterSet& params);
Tensor view_head(const Tensor& features, View view, const ParameterSet& params);
ViewWeights pawn_weights(const Tensor& f_t, const Tensor& f_l, const ParameterSet& params);
/// Convex combination of per-view probabilities; weights must be on the
/// simplex within 1e-6 or InvariantError is thrown.
Tensor fuse_predictions(const Tensor& pred_t, const Tensor& pred_l, ViewWeights w);

// ---------------------------------------------------------------------------
// Checkpoint file: "MVCK", u16 version, config block, u32 parameter count,
// then per parameter (u32 name length, name, u32 rank, u32 dims, f64 data),
// all integers and floats little-endian.

inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace mvpd
