#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvpd/data.hpp"
#include "mvpd/graph.hpp"
#include "mvpd/model.hpp"

namespace mvpd {

struct AdamWConfig {
  double lr = 5e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct MomentState {
  Tensor m;
  Tensor v;
  std::uint64_t step = 0;
};

/// Moments and step counts are kept per parameter, so a parameter group that
/// joins later (the weighting network after warm-up) starts its own bias
/// correction from step 1.
struct OptimizerState {
  std::map<std::string, MomentState> moments;
};

/// Decoupled weight decay: theta <- theta * (1 - lr * wd), then
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps). Only parameters present
/// in `grads` are touched.
void adamw_step(ParameterSet& params, const Gradients& grads, OptimizerState& state, const AdamWConfig& config);

enum class Contrastive : std::uint8_t { None, Vacl, Ocl };

struct TrainConfig {
  AdamWConfig adam;
  double lambda = 0.01;
  double epsilon = 0.001;
  std::size_t epochs = 60;
  std::optional<std::size_t> warmup_epochs;  // default: 10% of epochs, at least 1
  std::size_t batch_size = 32;
  bool augment = true;
  AugmentConfig augmentation;
  bool mixup = true;
  double mixup_alpha = 0.2;
  std::uint64_t seed = 1;

  std::size_t resolved_warmup() const;
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_ce = 0.0;
  double train_contrastive = 0.0;
  double val_acc = 0.0;
  double mean_w_t = 0.5;
};

struct History {
  std::vector<EpochRecord> epochs;
};

/// epoch,train_ce,train_vacl,val_acc,mean_w_t with round-trip precision.
std::string history_csv(const History& history);

/// Per-phase objective.
struct Objective {
  Fusion fusion = Fusion::Fixed;
  Contrastive contrastive = Contrastive::None;
  double lambda = 0.0;
  std::vector<std::string> trainable_prefixes;
};

/// Shuffling, augmentation and mixup stream shared by every phase of a run.
struct TrainStreams {
  std::mt19937_64 batches;
  explicit TrainStreams(std::uint64_t seed);
};

/// One pass over `train` in seeded random order. Returns the epoch's mean CE
/// and contrastive values.
EpochRecord train_epoch(Model& model, const Dataset& train, const Objective& objective, const TrainConfig& config,
                        OptimizerState& state, TrainStreams& streams);

/// Gradient of the objective on one prepared batch; exposed for probes.
struct StepResult {
  Gradients grads;
  double ce = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};
StepResult objective_gradients(const Model& model, const std::vector<TrainingExample>& batch,
                               const Objective& objective, double epsilon);

/// Warm-up: backbone and both heads under CE on the fixed 0.5/0.5 fusion.
/// Weighting-network parameters, if present, are left bitwise untouched.
History warmup_mvc(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& config,
                   std::size_t epochs, OptimizerState& state, TrainStreams& streams);

struct TrainResult {
  Model model;  // best validation-ACC checkpoint
  Model last;   // parameters after the final epoch
  History history;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
};

/// Joint phase: trains every parameter of `model` under `objective` for
/// `epochs` epochs, keeping the best validation-ACC checkpoint. Epoch numbers
/// in the history start at `first_epoch`.
TrainResult train_full(Model model, const Dataset& train, const Dataset& val, const TrainConfig& config,
                       const Objective& objective, std::size_t epochs, OptimizerState& state,
                       TrainStreams& streams, std::size_t first_epoch = 1);

/// Ablation mode bound to a training configuration.
class Trainer {
 public:
  Trainer(Mode mode, TrainConfig config);

  Mode mode() const { return mode_; }
  const TrainConfig& config() const { return config_; }
  /// Objective used after warm-up (or for every epoch when there is no warm-up).
  Objective main_objective() const;
  bool uses_warmup() const;

  /// Initialises a model for this mode from the config seed and trains it.
  TrainResult run(const ModelConfig& model_config, const Dataset& train, const Dataset& val) const;

 private:
  Mode mode_;
  TrainConfig config_;
};

Trainer ablation_variant(Mode mode, const TrainConfig& config);

}  // namespace mvpd
