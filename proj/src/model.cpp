#include "mvpd/model.hpp"

#include <cmath>
#include <random>

#include "mvpd/binary_io.hpp"

namespace mvpd {

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::SingleT: return "single_t";
    case Mode::SingleL: return "single_l";
    case Mode::MvcOnly: return "mvc_only";
    case Mode::MvcPawn: return "mvc_pawn";
    case Mode::MvcPawnOcl: return "mvc_pawn_ocl";
    case Mode::Full: return "full";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : kAllModes)
    if (mode_name(m) == name) return m;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "'");
}

Components components_for(Mode mode) {
  switch (mode) {
    case Mode::SingleT: return {true, false, false};
    case Mode::SingleL: return {false, true, false};
    case Mode::MvcOnly: return {true, true, false};
    case Mode::MvcPawn:
    case Mode::MvcPawnOcl:
    case Mode::Full: return {true, true, true};
  }
  return {};
}

Fusion default_fusion(Mode mode) {
  switch (mode) {
    case Mode::SingleT: return Fusion::TransverseOnly;
    case Mode::SingleL: return Fusion::LongitudinalOnly;
    case Mode::MvcOnly: return Fusion::Fixed;
    default: return Fusion::Learned;
  }
}

void ModelConfig::validate() const {
  if (image_side == 0 || patch_side == 0 || embed_dim == 0 || feature_dim == 0 || head_hidden == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (image_side % patch_side != 0)
    throw std::invalid_argument("patch_side " + std::to_string(patch_side) + " does not divide image_side " +
                                std::to_string(image_side));
  if (pawn_hidden.empty()) throw std::invalid_argument("pawn_hidden needs at least one layer");
  for (auto h : pawn_hidden)
    if (h == 0) throw std::invalid_argument("pawn_hidden sizes must be positive");
  if (num_classes != 2) throw std::invalid_argument("num_classes must be 2");
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c, Components parts) {
  std::vector<std::pair<std::string, Shape>> out;
  auto layer = [&](std::string prefix, std::size_t in, std::size_t outs) {
    out.emplace_back(prefix + "w", Shape{in, outs});
    out.emplace_back(prefix + "b", Shape{outs});
  };
  const std::string bb(param::kBackbone);
  layer(bb + "embed.", c.patch_pixels(), c.embed_dim);
  layer(bb + "fc1.", c.embed_dim, c.feature_dim);
  layer(bb + "fc2.", c.feature_dim, c.feature_dim);
  auto head = [&](std::string_view prefix) {
    layer(std::string(prefix) + "fc1.", c.feature_dim, c.head_hidden);
    layer(std::string(prefix) + "out.", c.head_hidden, c.num_classes);
  };
  if (parts.head_t) head(param::kHeadT);
  if (parts.head_l) head(param::kHeadL);
  if (parts.pawn) {
    std::size_t in = 2 * c.feature_dim;
    for (std::size_t i = 0; i < c.pawn_hidden.size(); ++i) {
      layer(std::string(param::kPawn) + "fc" + std::to_string(i + 1) + ".", in, c.pawn_hidden[i]);
      in = c.pawn_hidden[i];
    }
    layer(std::string(param::kPawn) + "out.", in, 2);
  }
  return out;
}

Model init_model(const ModelConfig& config, Mode mode, std::uint64_t seed) {
  config.validate();
  Model model{config, mode, {}};
  std::mt19937_64 rng(seed);
  for (auto& [name, shape] : parameter_layout(config, components_for(mode))) {
    Tensor t(shape);
    if (shape.size() == 2) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : t.data()) v = dist(rng);
    }
    model.params.emplace(name, std::move(t));
  }
  return model;
}

// ---------------------------------------------------------------------------

Tensor patchify(const Tensor& images, std::size_t side, std::size_t ps) {
  if (images.rank() != 2 || images.cols() != side * side)
    throw ShapeError("patchify: expected [B, " + std::to_string(side * side) + "] images, got " +
                     to_string(images.shape()));
  const std::size_t batch = images.rows();
  const std::size_t per_row = side / ps;
  const std::size_t patches = per_row * per_row;
  Tensor out({batch * patches, ps * ps});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t py = 0; py < per_row; ++py)
      for (std::size_t px = 0; px < per_row; ++px) {
        const std::size_t row = b * patches + py * per_row + px;
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x)
            out.at(row, y * ps + x) = (images.at(b, (py * ps + y) * side + px * ps + x) - kPixelMean) * kPixelScale;
      }
  return out;
}

Tensor pooling_matrix(std::size_t batch, std::size_t patches) {
  Tensor out({batch, batch * patches});
  const double w = 1.0 / static_cast<double>(patches);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < patches; ++p) out.at(b, b * patches + p) = w;
  return out;
}

NodeId backbone_features(Graph& g, NodeId patches, NodeId pool, const BackboneNodes& bb) {
  NodeId tokens = g.relu(g.affine(patches, bb.embed.w, bb.embed.b));
  NodeId pooled = g.matmul(pool, tokens);
  NodeId hidden = g.relu(g.affine(pooled, bb.fc1.w, bb.fc1.b));
  return g.affine(hidden, bb.fc2.w, bb.fc2.b);
}

NodeId head_probabilities(Graph& g, NodeId features, const HeadNodes& head) {
  NodeId hidden = g.relu(g.affine(features, head.fc1.w, head.fc1.b));
  return g.softmax(g.affine(hidden, head.out.w, head.out.b));
}

NodeId pawn_weights_node(Graph& g, NodeId f_t, NodeId f_l, const PawnNodes& pawn) {
  NodeId x = g.concat(f_t, f_l, 1);
  for (std::size_t i = 0; i + 1 < pawn.layers.size(); ++i)
    x = g.relu(g.affine(x, pawn.layers[i].w, pawn.layers[i].b));
  const LayerNodes& out = pawn.layers.back();
  return g.softmax(g.affine(x, out.w, out.b));
}

NodeId fuse_node(Graph& g, NodeId pred_t, NodeId pred_l, NodeId weights) {
  const std::size_t classes = g.shape(pred_t).back();
  // Column selectors broadcast w_t (resp. w_l) across the class axis.
  Tensor pick_t({2, classes});
  Tensor pick_l({2, classes});
  for (std::size_t c = 0; c < classes; ++c) {
    pick_t.at(0, c) = 1.0;
    pick_l.at(1, c) = 1.0;
  }
  NodeId wt = g.matmul(weights, g.constant(std::move(pick_t)));
  NodeId wl = g.matmul(weights, g.constant(std::move(pick_l)));
  return g.add(g.multiply(wt, pred_t), g.multiply(wl, pred_l));
}

namespace {

Tensor constant_weights(std::size_t batch, double w_t, double w_l) {
  Tensor w({batch, 2});
  for (std::size_t b = 0; b < batch; ++b) {
    w.at(b, 0) = w_t;
    w.at(b, 1) = w_l;
  }
  return w;
}

bool starts_with_any(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes)
    if (name.starts_with(p)) return true;
  return false;
}

}  // namespace

BatchGraph build_forward(const Model& model, const Tensor& images_t, const Tensor& images_l,
                         const ForwardOptions& options) {
  const ModelConfig& c = model.config;
  BatchGraph bg;
  Graph& g = bg.graph;

  const bool use_t = options.fusion != Fusion::LongitudinalOnly;
  const bool use_l = options.fusion != Fusion::TransverseOnly;
  const Components parts = model.components();
  if (use_t && !parts.head_t) throw std::invalid_argument("model has no transverse head");
  if (use_l && !parts.head_l) throw std::invalid_argument("model has no longitudinal head");
  if (options.fusion == Fusion::Learned && !parts.pawn)
    throw std::invalid_argument("learned fusion needs weighting-network parameters");

  std::map<std::string, NodeId> nodes;
  auto needed = [&](const std::string& name) {
    if (name.starts_with(param::kHeadT)) return use_t;
    if (name.starts_with(param::kHeadL)) return use_l;
    if (name.starts_with(param::kPawn)) return options.fusion == Fusion::Learned;
    return true;
  };
  for (const auto& [name, value] : model.params) {
    if (!needed(name)) continue;
    nodes[name] = starts_with_any(name, options.trainable_prefixes) ? g.parameter(name, value)
                                                                    : g.input(name, value);
  }
  auto layer = [&](const std::string& prefix) { return LayerNodes{nodes.at(prefix + "w"), nodes.at(prefix + "b")}; };
  const std::string bbp(param::kBackbone);
  const BackboneNodes bb{layer(bbp + "embed."), layer(bbp + "fc1."), layer(bbp + "fc2.")};

  const Tensor& any_images = use_t ? images_t : images_l;
  if (any_images.rank() != 2) throw ShapeError("images must be [B, side*side]");
  bg.batch = any_images.rows();
  const NodeId pool = g.constant(pooling_matrix(bg.batch, c.patches_per_image()));

  auto branch = [&](const Tensor& images, const char* name, std::string_view head_prefix,
                    std::optional<NodeId>& features, std::optional<NodeId>& pred) {
    if (images.rank() != 2 || images.rows() != bg.batch)
      throw ShapeError("view image batches must have equal sizes");
    NodeId patches = g.input(name, patchify(images, c.image_side, c.patch_side));
    features = backbone_features(g, patches, pool, bb);
    const std::string hp(head_prefix);
    pred = head_probabilities(g, *features, HeadNodes{layer(hp + "fc1."), layer(hp + "out.")});
  };
  if (use_t) branch(images_t, "patches_t", param::kHeadT, bg.f_t, bg.pred_t);
  if (use_l) branch(images_l, "patches_l", param::kHeadL, bg.f_l, bg.pred_l);

  switch (options.fusion) {
    case Fusion::TransverseOnly:
      bg.weights = g.constant(constant_weights(bg.batch, 1.0, 0.0));
      bg.fused = *bg.pred_t;
      break;
    case Fusion::LongitudinalOnly:
      bg.weights = g.constant(constant_weights(bg.batch, 0.0, 1.0));
      bg.fused = *bg.pred_l;
      break;
    case Fusion::Fixed:
      bg.weights = g.constant(constant_weights(bg.batch, 0.5, 0.5));
      bg.fused = fuse_node(g, *bg.pred_t, *bg.pred_l, bg.weights);
      break;
    case Fusion::Learned: {
      PawnNodes pawn;
      for (std::size_t i = 0; i < c.pawn_hidden.size(); ++i)
        pawn.layers.push_back(layer(std::string(param::kPawn) + "fc" + std::to_string(i + 1) + "."));
      pawn.layers.push_back(layer(std::string(param::kPawn) + "out."));
      bg.weights = pawn_weights_node(g, *bg.f_t, *bg.f_l, pawn);
      bg.fused = fuse_node(g, *bg.pred_t, *bg.pred_l, bg.weights);
      break;
    }
  }
  return bg;
}

// ---------------------------------------------------------------------------

namespace {

void input_layer(Graph& g, const ParameterSet& params, const std::string& prefix, LayerNodes& out) {
  out.w = g.input(prefix + "w", params.at(prefix + "w"));
  out.b = g.input(prefix + "b", params.at(prefix + "b"));
}

Tensor as_row(const Tensor& v, std::size_t expected, const char* what) {
  if (v.size() != expected)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) + " values, got " +
                     std::to_string(v.size()));
  return v.reshaped({1, expected});
}

}  // namespace

Tensor extract_features(const Tensor& image, const ModelConfig& config, const ParameterSet& params) {
  const std::size_t pixels = config.image_side * config.image_side;
  Tensor row = as_row(image, pixels, "extract_features");
  Graph g;
  BackboneNodes bb;
  const std::string p(param::kBackbone);
  input_layer(g, params, p + "embed.", bb.embed);
  input_layer(g, params, p + "fc1.", bb.fc1);
  input_layer(g, params, p + "fc2.", bb.fc2);
  NodeId patches = g.constant(patchify(row, config.image_side, config.patch_side));
  NodeId pool = g.constant(pooling_matrix(1, config.patches_per_image()));
  NodeId f = backbone_features(g, patches, pool, bb);
  return g.value(f).reshaped({g.shape(f)[1]});
}

Tensor view_head(const Tensor& features, View view, const ParameterSet& params) {
  const std::string p(view == View::Transverse ? param::kHeadT : param::kHeadL);
  Graph g;
  HeadNodes head;
  input_layer(g, params, p + "fc1.", head.fc1);
  input_layer(g, params, p + "out.", head.out);
  NodeId f = g.constant(as_row(features, g.shape(head.fc1.w)[0], "view_head"));
  NodeId probs = head_probabilities(g, f, head);
  return g.value(probs).reshaped({g.shape(probs)[1]});
}

ViewWeights pawn_weights(const Tensor& f_t, const Tensor& f_l, const ParameterSet& params) {
  Graph g;
  PawnNodes pawn;
  const std::string p(param::kPawn);
  for (std::size_t i = 1; params.count(p + "fc" + std::to_string(i) + ".w"); ++i) {
    LayerNodes l;
    input_layer(g, params, p + "fc" + std::to_string(i) + ".", l);
    pawn.layers.push_back(l);
  }
  LayerNodes out;
  input_layer(g, params, p + "out.", out);
  pawn.layers.push_back(out);
  const std::size_t d = g.shape(pawn.layers.front().w)[0] / 2;
  NodeId t = g.constant(as_row(f_t, d, "pawn_weights"));
  NodeId l = g.constant(as_row(f_l, d, "pawn_weights"));
  const Tensor& w = g.value(pawn_weights_node(g, t, l, pawn));
  return {w[0], w[1]};
}

Tensor fuse_predictions(const Tensor& pred_t, const Tensor& pred_l, ViewWeights w) {
  if (pred_t.shape() != pred_l.shape()) throw ShapeError("fuse_predictions: prediction shapes differ");
  if (w.w_t < -1e-6 || w.w_l < -1e-6 || std::fabs(w.w_t + w.w_l - 1.0) > 1e-6)
    throw InvariantError("view weights (" + std::to_string(w.w_t) + ", " + std::to_string(w.w_l) +
                         ") are off the simplex");
  Graph g;
  const std::size_t n = pred_t.size();
  NodeId t = g.constant(pred_t.reshaped({1, n}));
  NodeId l = g.constant(pred_l.reshaped({1, n}));
  NodeId weights = g.constant(Tensor::matrix(1, 2, {w.w_t, w.w_l}));
  return g.value(fuse_node(g, t, l, weights)).reshaped({n});
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kCheckpointMagic = "MVCK";
}

void save_checkpoint(const std::string& path, const Model& model) {
  const ModelConfig& c = model.config;
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.image_side));
  w.u32(static_cast<std::uint32_t>(c.patch_side));
  w.u32(static_cast<std::uint32_t>(c.embed_dim));
  w.u32(static_cast<std::uint32_t>(c.feature_dim));
  w.u32(static_cast<std::uint32_t>(c.head_hidden));
  w.u32(static_cast<std::uint32_t>(c.pawn_hidden.size()));
  for (auto h : c.pawn_hidden) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.u8(static_cast<std::uint8_t>(model.mode));

  const auto layout = parameter_layout(c, model.components());
  w.u32(static_cast<std::uint32_t>(layout.size()));
  for (const auto& [name, shape] : layout) {
    const Tensor& t = model.params.at(name);
    if (t.shape() != shape) throw ShapeError("parameter '" + name + "' has unexpected shape");
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  }
  write_file(path, w.buffer());
}

Model load_checkpoint(const std::string& path) {
  ByteReader r(read_file(path));
  if (r.bytes(4) != kCheckpointMagic) throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  if (const auto v = r.u16(); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  Model model;
  ModelConfig& c = model.config;
  c.image_side = r.u32();
  c.patch_side = r.u32();
  c.embed_dim = r.u32();
  c.feature_dim = r.u32();
  c.head_hidden = r.u32();
  c.pawn_hidden.assign(r.u32(), 0);
  for (auto& h : c.pawn_hidden) h = r.u32();
  c.num_classes = r.u32();
  const std::uint8_t mode = r.u8();
  if (mode >= kAllModes.size()) throw FormatError("unknown mode tag in checkpoint");
  model.mode = static_cast<Mode>(mode);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid checkpoint config: ") + e.what());
  }

  const auto layout = parameter_layout(c, model.components());
  const std::uint32_t count = r.u32();
  if (count != layout.size()) throw FormatError("checkpoint parameter count does not match its mode");
  for (const auto& [expected_name, expected_shape] : layout) {
    std::string name = r.bytes(r.u32());
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    if (name != expected_name || shape != expected_shape)
      throw FormatError("unexpected parameter '" + name + "' " + to_string(shape) + " in checkpoint");
    std::vector<double> data(element_count(shape));
    for (double& v : data) v = r.f64();
    model.params.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint parameters");
  return model;
}

}  // namespace mvpd
