#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mvpd/data.hpp"
#include "mvpd/eval.hpp"
#include "mvpd/model.hpp"
#include "mvpd/training.hpp"

namespace mvpd {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // anything not covered below, including a failed gradient suite
  kExitConfig = 2,
  kExitData = 3,
  kExitPartialAblation = 4,
  kExitLookup = 5,
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LookupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  GenConfig gen;
  SplitSpec split;
  ModelConfig model;
  TrainConfig train;
  double threshold = 0.5;
  std::size_t eval_batch_size = 64;

  Mode mode = Mode::Full;
  std::vector<std::uint64_t> seeds = {1};  // ablation seeds
  std::string dataset;                     // empty: ablate generates one per seed
  std::string checkpoint;
  std::string out;
  std::vector<std::uint32_t> ids;  // inspect; empty means every patient

  /// Sets every seed (generator, split, training, ablation list) to `seed`.
  void set_all_seeds(std::uint64_t seed);
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

/// Every configurable key, in echo order.
std::vector<std::string> config_keys();

/// Throws ConfigError on an unknown key or an unparsable value.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// key=value lines; blank lines and lines starting with '#' are skipped.
void apply_config_text(RunConfig& config, std::string_view text);
void apply_config_file(RunConfig& config, const std::string& path);

/// One key=value line per key, doubles in shortest round-trip form. Feeding
/// the text back through apply_config_text reproduces the config.
std::string render_config(const RunConfig& config);

// ---------------------------------------------------------------------------

struct ModeOutcome {
  Mode mode = Mode::Full;
  std::uint64_t seed = 0;
  std::optional<Evaluation> test;  // empty when the run failed
  std::optional<double> weight_rho_correlation;
  std::size_t best_epoch = 0;
  std::string failure;
};

struct AblationResult {
  std::vector<ModeOutcome> runs;  // seed-major, modes in canonical order
  Report report;                  // per-mode means over seeds
  bool complete() const;
};

/// Trains and evaluates every mode for every seed in `config.seeds`. For seed
/// s the split and training seeds become s; without a dataset path the
/// generator seed becomes s as well and the data is generated in memory.
/// Writes per-seed reports and inspections under `config.out` when it is
/// non-empty.
AblationResult run_ablation(const RunConfig& config, std::ostream& log);

/// Per-mode mean of the five metrics over the successful runs of that mode;
/// a metric is undefined if it is undefined in any run.
Report mean_report(const std::vector<ModeOutcome>& runs);

// ---------------------------------------------------------------------------
// Subcommands. Each echoes the resolved config to `err` before running and
// returns an ExitCode.

int cmd_generate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_ablate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_inspect(const RunConfig& config, bool csv, std::ostream& out, std::ostream& err);
int cmd_check_gradients(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Full command line (args[0] is the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mvpd
