#include "mvpd/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mvpd/eval.hpp"
#include "mvpd/losses.hpp"

namespace mvpd {

void adamw_step(ParameterSet& params, const Gradients& grads, OptimizerState& state, const AdamWConfig& config) {
  const double decay = 1.0 - config.lr * config.weight_decay;
  for (const auto& [name, grad] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("gradient for unknown parameter '" + name + "'");
    Tensor& p = it->second;
    if (p.shape() != grad.shape())
      throw ShapeError("gradient shape " + to_string(grad.shape()) + " does not match parameter '" + name + "' " +
                       to_string(p.shape()));
    MomentState& st = state.moments[name];
    if (st.m.empty()) {
      st.m = Tensor(p.shape());
      st.v = Tensor(p.shape());
    }
    if (st.m.shape() != p.shape()) throw ShapeError("optimizer state for '" + name + "' has the wrong shape");
    ++st.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(st.step));
    auto pd = p.data();
    auto gd = grad.data();
    auto md = st.m.data();
    auto vd = st.v.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = config.beta1 * md[i] + (1.0 - config.beta1) * gd[i];
      vd[i] = config.beta2 * vd[i] + (1.0 - config.beta2) * gd[i] * gd[i];
      const double m_hat = md[i] / bc1;
      const double v_hat = vd[i] / bc2;
      pd[i] *= decay;
      pd[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

// ---------------------------------------------------------------------------

std::size_t TrainConfig::resolved_warmup() const {
  if (warmup_epochs) return *warmup_epochs;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(epochs))));
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(adam.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (adam.weight_decay < 0.0) throw std::invalid_argument("weight decay must be non-negative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw std::invalid_argument("adam eps must be positive");
  if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (mixup && !(mixup_alpha > 0.0)) throw std::invalid_argument("mixup alpha must be positive");
  if (resolved_warmup() >= epochs) throw std::invalid_argument("warmup_epochs must be smaller than epochs");
}

std::string history_csv(const History& history) {
  std::string out = "epoch,train_ce,train_vacl,val_acc,mean_w_t\n";
  char buf[160];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.train_ce, e.train_contrastive,
                  e.val_acc, e.mean_w_t);
    out += buf;
  }
  return out;
}

TrainStreams::TrainStreams(std::uint64_t seed) : batches(mix_seed(seed, 1)) {}

// ---------------------------------------------------------------------------

StepResult objective_gradients(const Model& model, const std::vector<TrainingExample>& batch,
                               const Objective& objective, double epsilon) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  const std::size_t pixels = model.config.image_side * model.config.image_side;
  const std::size_t n = batch.size();
  Tensor it({n, pixels}), il({n, pixels}), labels({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = batch[i];
    if (ex.image_t.size() != pixels || ex.image_l.size() != pixels)
      throw ShapeError("training images do not match the model image side");
    std::copy(ex.image_t.data().begin(), ex.image_t.data().end(), it.data().begin() + static_cast<std::ptrdiff_t>(i * pixels));
    std::copy(ex.image_l.data().begin(), ex.image_l.data().end(), il.data().begin() + static_cast<std::ptrdiff_t>(i * pixels));
    labels.at(i, 0) = ex.label[0];
    labels.at(i, 1) = ex.label[1];
  }

  BatchGraph bg = build_forward(model, it, il, ForwardOptions{objective.fusion, objective.trainable_prefixes});
  Graph& g = bg.graph;
  const NodeId ce = cross_entropy_node(g, bg.fused, g.input("labels", std::move(labels)));
  NodeId total = ce;
  std::optional<NodeId> contrastive;
  if (objective.contrastive != Contrastive::None && objective.lambda > 0.0) {
    if (!bg.f_t || !bg.f_l) throw std::invalid_argument("contrastive terms need both views");
    contrastive = objective.contrastive == Contrastive::Vacl ? vacl_node(g, *bg.f_t, *bg.f_l, bg.weights, epsilon)
                                                             : ocl_node(g, *bg.f_t, *bg.f_l, epsilon);
    total = total_loss_node(g, ce, *contrastive, objective.lambda);
  }

  StepResult r;
  r.grads = gradients(g, {}, total);
  r.ce = g.value(ce)[0];
  r.contrastive = contrastive ? g.value(*contrastive)[0] : 0.0;
  r.total = g.value(total)[0];
  return r;
}

EpochRecord train_epoch(Model& model, const Dataset& train, const Objective& objective, const TrainConfig& config,
                        OptimizerState& state, TrainStreams& streams) {
  if (train.samples.empty()) throw std::invalid_argument("cannot train on an empty split");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), streams.batches);

  EpochRecord rec;
  double ce_sum = 0.0, con_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t n = std::min(config.batch_size, order.size() - start);
    std::vector<TrainingExample> batch;
    batch.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Sample& s = train.samples[order[start + i]];
      batch.push_back(to_training_example(config.augment ? augment(s, config.augmentation, streams.batches) : s));
    }
    if (config.mixup) batch = mixup(batch, config.mixup_alpha, streams.batches);

    StepResult step = objective_gradients(model, batch, objective, config.epsilon);
    adamw_step(model.params, step.grads, state, config.adam);
    ce_sum += step.ce * static_cast<double>(n);
    con_sum += step.contrastive * static_cast<double>(n);
  }
  rec.train_ce = ce_sum / static_cast<double>(train.size());
  rec.train_contrastive = con_sum / static_cast<double>(train.size());
  return rec;
}

namespace {

const std::vector<std::string>& mvc_prefixes() {
  static const std::vector<std::string> p = {std::string(param::kBackbone), std::string(param::kHeadT),
                                             std::string(param::kHeadL)};
  return p;
}

void score_on_validation(const Model& model, const Dataset& val, Fusion fusion, EpochRecord& rec) {
  EvalOptions opts;
  opts.fusion = fusion;
  const Evaluation ev = evaluate_model(model, val, opts);
  rec.val_acc = compute_metrics(ev.cm).acc.value_or(0.0);
  double w = 0.0;
  for (const auto& r : ev.records) w += r.w_t;
  rec.mean_w_t = w / static_cast<double>(ev.records.size());
}

}  // namespace

History warmup_mvc(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& config,
                   std::size_t epochs, OptimizerState& state, TrainStreams& streams) {
  if (train.samples.empty()) throw std::invalid_argument("cannot warm up on an empty split");
  const Components parts = model.components();
  if (!parts.head_t || !parts.head_l) throw std::invalid_argument("warm-up needs both view heads");
  const Objective objective{Fusion::Fixed, Contrastive::None, 0.0, mvc_prefixes()};
  History history;
  for (std::size_t e = 1; e <= epochs; ++e) {
    EpochRecord rec = train_epoch(model, train, objective, config, state, streams);
    rec.epoch = e;
    if (!val.samples.empty()) score_on_validation(model, val, Fusion::Fixed, rec);
    history.epochs.push_back(rec);
  }
  return history;
}

TrainResult train_full(Model model, const Dataset& train, const Dataset& val, const TrainConfig& config,
                       const Objective& objective, std::size_t epochs, OptimizerState& state,
                       TrainStreams& streams, std::size_t first_epoch) {
  if (train.samples.empty() || val.samples.empty()) throw std::invalid_argument("train and val splits must be non-empty");
  TrainResult result;
  bool have_best = false;
  for (std::size_t k = 0; k < epochs; ++k) {
    EpochRecord rec = train_epoch(model, train, objective, config, state, streams);
    rec.epoch = first_epoch + k;
    score_on_validation(model, val, objective.fusion, rec);
    if (!have_best || rec.val_acc > result.best_val_acc) {
      have_best = true;
      result.best_val_acc = rec.val_acc;
      result.best_epoch = rec.epoch;
      result.model = model;
    }
    result.history.epochs.push_back(rec);
  }
  if (!have_best) result.model = model;
  result.last = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Mode mode, TrainConfig config) : mode_(mode), config_(std::move(config)) { config_.validate(); }

Trainer ablation_variant(Mode mode, const TrainConfig& config) { return Trainer(mode, config); }

bool Trainer::uses_warmup() const { return components_for(mode_).pawn && config_.resolved_warmup() > 0; }

Objective Trainer::main_objective() const {
  Objective o;
  o.fusion = default_fusion(mode_);
  o.trainable_prefixes = {std::string(param::kBackbone)};
  const Components parts = components_for(mode_);
  if (parts.head_t) o.trainable_prefixes.emplace_back(param::kHeadT);
  if (parts.head_l) o.trainable_prefixes.emplace_back(param::kHeadL);
  if (parts.pawn) o.trainable_prefixes.emplace_back(param::kPawn);
  if (mode_ == Mode::Full) o.contrastive = Contrastive::Vacl;
  if (mode_ == Mode::MvcPawnOcl) o.contrastive = Contrastive::Ocl;
  o.lambda = o.contrastive == Contrastive::None ? 0.0 : config_.lambda;
  return o;
}

TrainResult Trainer::run(const ModelConfig& model_config, const Dataset& train_in, const Dataset& val_in) const {
  if (train_in.samples.empty()) throw std::invalid_argument("cannot train on an empty split");
  if (val_in.samples.empty()) throw std::invalid_argument("validation split is empty");
  Model model = init_model(model_config, mode_, mix_seed(config_.seed, 2));
  const Dataset train = resized(train_in, model_config.image_side);
  const Dataset val = resized(val_in, model_config.image_side);

  TrainStreams streams(config_.seed);
  OptimizerState state;
  std::size_t done = 0;
  History warm;
  if (uses_warmup()) {
    done = config_.resolved_warmup();
    warm = warmup_mvc(model, train, val, config_, done, state, streams);
  }
  TrainResult result = train_full(std::move(model), train, val, config_, main_objective(), config_.epochs - done,
                                  state, streams, done + 1);
  warm.epochs.insert(warm.epochs.end(), result.history.epochs.begin(), result.history.epochs.end());
  result.history = std::move(warm);
  return result;
}

}  // namespace mvpd
