#include "mvpd/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "mvpd/binary_io.hpp"
#include "mvpd/gradient_suite.hpp"

namespace mvpd {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Value codecs

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view key, std::string_view text) {
  double v = 0.0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size() || !std::isfinite(v))
    throw ConfigError(std::string(key) + ": '" + std::string(text) + "' is not a number");
  return v;
}

std::uint64_t parse_uint(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw ConfigError(std::string(key) + ": '" + std::string(text) + "' is not a non-negative integer");
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(text) + "'");
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = text.find(',', start);
    const std::string item = trim(text.substr(start, comma == std::string_view::npos ? comma : comma - start));
    out.push_back(static_cast<T>(parse_uint(key, item)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
std::string format_list(const std::vector<T>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename Member>
Field real(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); },
          [member, key](RunConfig& c, std::string_view v) { member(c) = parse_double(key, v); }};
}

template <typename Member>
Field count(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member, key](RunConfig& c, std::string_view v) {
            using T = std::remove_reference_t<decltype(member(c))>;
            member(c) = static_cast<T>(parse_uint(key, v));
          }};
}

template <typename Member>
Field flag(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [member, key](RunConfig& c, std::string_view v) { member(c) = parse_bool(key, v); }};
}

template <typename Member>
Field text(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
          [member](RunConfig& c, std::string_view v) { member(c) = std::string(v); }};
}

#define MEMBER(expr) [](RunConfig & c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(count("gen.n_patients", MEMBER(gen.n_patients)));
    f.push_back(count("gen.image_side", MEMBER(gen.image_side)));
    f.push_back(real("gen.balance", MEMBER(gen.balance)));
    f.push_back(real("gen.amplitude", MEMBER(gen.amplitude)));
    f.push_back(real("gen.noise_std", MEMBER(gen.noise_std)));
    f.push_back(real("gen.rho_min", MEMBER(gen.rho_min)));
    f.push_back(real("gen.rho_max", MEMBER(gen.rho_max)));
    f.push_back(count("gen.seed", MEMBER(gen.seed)));

    f.push_back(real("split.train", MEMBER(split.train)));
    f.push_back(real("split.val", MEMBER(split.val)));
    f.push_back(real("split.test", MEMBER(split.test)));
    f.push_back(count("split.seed", MEMBER(split.seed)));

    f.push_back(count("model.image_side", MEMBER(model.image_side)));
    f.push_back(count("model.patch_side", MEMBER(model.patch_side)));
    f.push_back(count("model.embed_dim", MEMBER(model.embed_dim)));
    f.push_back(count("model.feature_dim", MEMBER(model.feature_dim)));
    f.push_back(count("model.head_hidden", MEMBER(model.head_hidden)));
    f.push_back({"model.pawn_hidden", [](const RunConfig& c) { return format_list(c.model.pawn_hidden); },
                 [](RunConfig& c, std::string_view v) {
                   c.model.pawn_hidden = parse_list<std::size_t>("model.pawn_hidden", v);
                 }});

    f.push_back(real("train.lr", MEMBER(train.adam.lr)));
    f.push_back(real("train.weight_decay", MEMBER(train.adam.weight_decay)));
    f.push_back(real("train.beta1", MEMBER(train.adam.beta1)));
    f.push_back(real("train.beta2", MEMBER(train.adam.beta2)));
    f.push_back(real("train.adam_eps", MEMBER(train.adam.eps)));
    f.push_back(real("train.lambda", MEMBER(train.lambda)));
    f.push_back(real("train.epsilon", MEMBER(train.epsilon)));
    f.push_back(count("train.epochs", MEMBER(train.epochs)));
    f.push_back({"train.warmup_epochs",
                 [](const RunConfig& c) {
                   return c.train.warmup_epochs ? std::to_string(*c.train.warmup_epochs) : std::string("auto");
                 },
                 [](RunConfig& c, std::string_view v) {
                   if (v == "auto")
                     c.train.warmup_epochs.reset();
                   else
                     c.train.warmup_epochs = parse_uint("train.warmup_epochs", v);
                 }});
    f.push_back(count("train.batch_size", MEMBER(train.batch_size)));
    f.push_back(flag("train.augment", MEMBER(train.augment)));
    f.push_back(real("train.p_flip", MEMBER(train.augmentation.p_flip)));
    f.push_back(real("train.p_rotate", MEMBER(train.augmentation.p_rotate)));
    f.push_back(real("train.p_scale", MEMBER(train.augmentation.p_scale)));
    f.push_back(real("train.max_rotation_deg", MEMBER(train.augmentation.max_rotation_deg)));
    f.push_back(real("train.scale_min", MEMBER(train.augmentation.scale_min)));
    f.push_back(real("train.scale_max", MEMBER(train.augmentation.scale_max)));
    f.push_back(flag("train.mixup", MEMBER(train.mixup)));
    f.push_back(real("train.mixup_alpha", MEMBER(train.mixup_alpha)));
    f.push_back(count("train.seed", MEMBER(train.seed)));

    f.push_back(real("eval.threshold", MEMBER(threshold)));
    f.push_back(count("eval.batch_size", MEMBER(eval_batch_size)));

    f.push_back({"run.mode", [](const RunConfig& c) { return std::string(mode_name(c.mode)); },
                 [](RunConfig& c, std::string_view v) {
                   try {
                     c.mode = parse_mode(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("run.mode: ") + e.what());
                   }
                 }});
    f.push_back({"run.seeds", [](const RunConfig& c) { return format_list(c.seeds); },
                 [](RunConfig& c, std::string_view v) { c.seeds = parse_list<std::uint64_t>("run.seeds", v); }});
    f.push_back(text("run.dataset", MEMBER(dataset)));
    f.push_back(text("run.checkpoint", MEMBER(checkpoint)));
    f.push_back(text("run.out", MEMBER(out)));
    f.push_back({"run.ids", [](const RunConfig& c) { return format_list(c.ids); },
                 [](RunConfig& c, std::string_view v) { c.ids = parse_list<std::uint32_t>("run.ids", v); }});
    return f;
  }();
  return table;
}

#undef MEMBER

// ---------------------------------------------------------------------------

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

Dataset load_dataset_or_throw(const std::string& path) {
  if (path.empty()) throw ConfigError("no dataset given (use --dataset)");
  try {
    return load_dataset(path);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

void echo_config(const RunConfig& config, std::ostream& err) {
  err << "# resolved config\n" << render_config(config) << std::flush;
}

std::string metrics_line(const Metrics& m) {
  return "acc=" + format_percent(m.acc) + " sen=" + format_percent(m.sen) + " spe=" + format_percent(m.spe) +
         " pre=" + format_percent(m.pre) + " f1=" + format_percent(m.f1);
}

std::string optional_number(std::optional<double> v) { return v ? format_double(*v) : std::string("undefined"); }

TrainConfig train_config_for_seed(const RunConfig& config, std::uint64_t seed) {
  TrainConfig t = config.train;
  t.seed = seed;
  return t;
}

EvalOptions eval_options(const RunConfig& config) {
  EvalOptions o;
  o.threshold = config.threshold;
  o.batch_size = config.eval_batch_size;
  return o;
}

bool finite_history(const History& h) {
  for (const auto& e : h.epochs)
    if (!std::isfinite(e.train_ce) || !std::isfinite(e.train_contrastive)) return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------

void RunConfig::set_all_seeds(std::uint64_t seed) {
  gen.seed = seed;
  split.seed = seed;
  train.seed = seed;
  seeds = {seed};
}

void RunConfig::validate() const {
  try {
    gen.validate();
    model.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  for (double r : {split.train, split.val, split.test})
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::fabs(split.train + split.val + split.test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("eval.threshold must lie in [0, 1]");
  if (eval_batch_size == 0) throw ConfigError("eval.batch_size must be positive");
  if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  for (const auto& f : fields())
    if (f.key == key) {
      f.set(config, trim(value));
      return;
    }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_config_text(RunConfig& config, std::string_view body) {
  std::istringstream in{std::string(body)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key=value");
    apply_setting(config, trim(std::string_view(t).substr(0, eq)), std::string_view(t).substr(eq + 1));
  }
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str());
}

std::string render_config(const RunConfig& config) {
  std::string s;
  for (const auto& f : fields()) s += f.key + "=" + f.get(config) + "\n";
  return s;
}

// ---------------------------------------------------------------------------

bool AblationResult::complete() const {
  for (const auto& r : runs)
    if (!r.test) return false;
  return !runs.empty();
}

Report mean_report(const std::vector<ModeOutcome>& runs) {
  std::vector<ReportRow> rows;
  for (Mode mode : kAllModes) {
    std::vector<const ModeOutcome*> ok;
    std::string failure;
    bool seen = false;
    for (const auto& r : runs) {
      if (r.mode != mode) continue;
      seen = true;
      if (r.test)
        ok.push_back(&r);
      else if (failure.empty())
        failure = "seed " + std::to_string(r.seed) + ": " + r.failure;
    }
    if (!seen) continue;
    if (!failure.empty() || ok.empty()) {
      rows.push_back({mode, std::nullopt, failure});
      continue;
    }
    auto mean = [&](auto pick) -> std::optional<double> {
      double total = 0.0;
      for (const ModeOutcome* r : ok) {
        const std::optional<double> v = pick(compute_metrics(r->test->cm));
        if (!v) return std::nullopt;
        total += *v;
      }
      return total / static_cast<double>(ok.size());
    };
    Metrics m;
    m.acc = mean([](const Metrics& x) { return x.acc; });
    m.sen = mean([](const Metrics& x) { return x.sen; });
    m.spe = mean([](const Metrics& x) { return x.spe; });
    m.pre = mean([](const Metrics& x) { return x.pre; });
    m.f1 = mean([](const Metrics& x) { return x.f1; });
    rows.push_back({mode, m, ""});
  }
  return emit_report(rows);
}

AblationResult run_ablation(const RunConfig& config, std::ostream& log) {
  config.validate();
  std::optional<Dataset> shared;
  if (!config.dataset.empty()) shared = load_dataset_or_throw(config.dataset);
  const fs::path root = config.out;
  if (!config.out.empty()) make_dirs(root);

  AblationResult result;
  std::string runs_csv = "seed,mode,acc,sen,spe,pre,f1,weight_rho_spearman,best_epoch,status\n";
  for (std::uint64_t seed : config.seeds) {
    Dataset data;
    if (shared) {
      data = *shared;
    } else {
      GenConfig g = config.gen;
      g.seed = seed;
      data = generate_synthetic(g);
    }
    SplitSpec spec = config.split;
    spec.seed = seed;
    const Splits splits = split(data, spec);
    const fs::path dir = root / ("seed_" + std::to_string(seed));
    if (!config.out.empty()) make_dirs(dir);

    std::vector<ModeOutcome> seed_runs;
    for (Mode mode : kAllModes) {
      ModeOutcome o;
      o.mode = mode;
      o.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const TrainResult tr = ablation_variant(mode, train_config_for_seed(config, seed))
                                   .run(config.model, splits.train, splits.val);
        if (!finite_history(tr.history)) throw std::runtime_error("non-finite training loss");
        o.best_epoch = tr.best_epoch;
        o.test = evaluate_model(tr.model, splits.test, eval_options(config));
        if (o.test->records.size() >= 3) o.weight_rho_correlation = weight_correlation(o.test->records);
        if (!config.out.empty()) {
          const std::string name(mode_name(mode));
          write_text(dir / ("history_" + name + ".csv"), history_csv(tr.history));
          write_text(dir / ("inspections_" + name + ".csv"), inspections_csv(o.test->records));
        }
      } catch (const DataError&) {
        throw;
      } catch (const std::exception& e) {
        o.test.reset();
        o.failure = e.what();
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::ostringstream line;
      line << "seed " << seed << " " << mode_name(mode) << ": ";
      if (o.test)
        line << metrics_line(compute_metrics(o.test->cm)) << " w_rho=" << optional_number(o.weight_rho_correlation);
      else
        line << "FAILED (" << o.failure << ")";
      line << " [" << std::fixed << std::setprecision(1) << secs << " s]";
      log << line.str() << "\n" << std::flush;

      runs_csv += std::to_string(seed) + "," + std::string(mode_name(mode));
      if (o.test) {
        const Metrics m = compute_metrics(o.test->cm);
        for (auto v : {m.acc, m.sen, m.spe, m.pre, m.f1}) runs_csv += "," + optional_number(v);
        runs_csv += "," + optional_number(o.weight_rho_correlation) + "," + std::to_string(o.best_epoch) + ",ok\n";
      } else {
        runs_csv += ",,,,,,,,failed\n";
      }
      seed_runs.push_back(o);
    }
    if (!config.out.empty()) {
      const Report r = mean_report(seed_runs);
      write_text(dir / "report.md", r.markdown);
      write_text(dir / "report.csv", r.csv);
    }
    result.runs.insert(result.runs.end(), seed_runs.begin(), seed_runs.end());
  }
  result.report = mean_report(result.runs);
  if (!config.out.empty()) {
    write_text(root / "report.md", result.report.markdown);
    write_text(root / "report.csv", result.report.csv);
    write_text(root / "ablation_runs.csv", runs_csv);
    write_text(root / "config.txt", render_config(config));
  }
  return result;
}

// ---------------------------------------------------------------------------

int cmd_generate(const RunConfig& config, std::ostream& out, std::ostream& err) {
  echo_config(config, err);
  config.validate();
  if (config.out.empty()) throw ConfigError("generate needs an output path (use --out)");
  const Dataset ds = generate_synthetic(config.gen);
  try {
    save_dataset(config.out, ds);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  write_text(config.out + ".manifest", manifest_text(config.gen, ds));
  std::size_t malignant = 0;
  for (const auto& s : ds.samples) malignant += static_cast<std::size_t>(s.label);
  out << "samples=" << ds.size() << " malignant=" << malignant << " benign=" << ds.size() - malignant
      << " balance=" << format_double(static_cast<double>(malignant) / static_cast<double>(ds.size())) << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
  echo_config(config, err);
  config.validate();
  if (config.out.empty()) throw ConfigError("train needs an output directory (use --out)");
  const Dataset data = load_dataset_or_throw(config.dataset);
  const Splits splits = split(data, config.split);
  const fs::path dir = config.out;
  make_dirs(dir);

  const TrainResult tr = ablation_variant(config.mode, config.train).run(config.model, splits.train, splits.val);
  try {
    save_checkpoint((dir / "checkpoint.mvck").string(), tr.model);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  write_text(dir / "history.csv", history_csv(tr.history));
  write_text(dir / "config.txt", render_config(config));

  const Evaluation test = evaluate_model(tr.model, splits.test, eval_options(config));
  out << "mode=" << mode_name(config.mode) << " best_epoch=" << tr.best_epoch
      << " best_val_acc=" << format_percent(tr.best_val_acc) << "\n";
  out << "test " << metrics_line(compute_metrics(test.cm));
  if (test.records.size() >= 3) out << " w_rho=" << optional_number(weight_correlation(test.records));
  out << "\n";
  return kExitOk;
}

int cmd_ablate(const RunConfig& config, std::ostream& out, std::ostream& err) {
  echo_config(config, err);
  if (config.out.empty()) throw ConfigError("ablate needs an output directory (use --out)");
  const AblationResult r = run_ablation(config, err);
  out << r.report.markdown;
  return r.complete() ? kExitOk : kExitPartialAblation;
}

int cmd_inspect(const RunConfig& config, bool csv, std::ostream& out, std::ostream& err) {
  echo_config(config, err);
  config.validate();
  if (config.checkpoint.empty()) throw ConfigError("inspect needs a checkpoint (use --checkpoint)");
  Model model;
  try {
    model = load_checkpoint(config.checkpoint);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  const Dataset data = load_dataset_or_throw(config.dataset);

  Dataset chosen{data.side, {}};
  if (config.ids.empty()) {
    chosen = data;
  } else {
    std::map<std::uint32_t, std::size_t> index;
    for (std::size_t i = 0; i < data.size(); ++i) index.emplace(data.samples[i].patient_id, i);
    for (std::uint32_t id : config.ids) {
      const auto it = index.find(id);
      if (it == index.end()) throw LookupError("unknown patient id " + std::to_string(id));
      chosen.samples.push_back(data.samples[it->second]);
    }
  }
  const Evaluation ev = evaluate_model(model, chosen, eval_options(config));
  if (csv) {
    out << inspections_csv(ev.records);
    return kExitOk;
  }
  auto cell = [](std::optional<double> v) {
    std::ostringstream s;
    if (v)
      s << std::fixed << std::setprecision(4) << *v;
    else
      s << "-";
    return s.str();
  };
  out << std::left << std::setw(8) << "id" << std::setw(9) << "pred_t" << std::setw(9) << "pred_l" << std::setw(9)
      << "fused" << std::setw(9) << "w_t" << std::setw(9) << "w_l" << std::setw(7) << "label"
      << "rho\n";
  for (const auto& r : ev.records) {
    out << std::left << std::setw(8) << r.patient_id
        << std::setw(9) << cell(r.pred_t ? std::optional<double>((*r.pred_t)[1]) : std::nullopt)
        << std::setw(9) << cell(r.pred_l ? std::optional<double>((*r.pred_l)[1]) : std::nullopt)
        << std::setw(9) << cell(r.fused[1]) << std::setw(9) << cell(r.w_t) << std::setw(9) << cell(r.w_l)
        << std::setw(7) << r.label << cell(r.rho) << "\n";
  }
  return kExitOk;
}

int cmd_check_gradients(const RunConfig& config, std::ostream& out, std::ostream& err) {
  echo_config(config, err);
  const GradientSuiteReport report = run_gradient_suite(config.train.seed);
  for (const auto& c : report.cases) {
    out << std::left << std::setw(22) << c.name << " points=" << c.points << "/" << c.attempts
        << " max_rel_err=" << std::scientific << std::setprecision(3) << c.max_relative_error
        << " roundoff_floor=" << c.roundoff_floor() << std::defaultfloat
        << (c.max_relative_error < kGradientTolerance ? " ok" : " FAIL") << "\n";
  }
  const bool ok = report.passed();
  out << (ok ? "gradient suite passed" : "gradient suite failed") << " (tolerance " << kGradientTolerance << ")\n";
  return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-view classifier with personalised view weighting"};
  app.require_subcommand(1);

  struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode, out, dataset, checkpoint, ids;
    std::optional<std::size_t> epochs, batch_size;
    std::optional<double> lambda;
    std::vector<std::string> settings;
    bool csv = false;
  } o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key=value config file");
    sub->add_option("--set", o.settings, "override one config key (key=value); repeatable");
    sub->add_option("--seed", o.seed, "sets generator, split, training and ablation seeds");
    sub->add_option("--out", o.out, "output file (generate) or directory");
  };
  auto training = [&](CLI::App* sub) {
    sub->add_option("--mode", o.mode, "single_t, single_l, mvc_only, mvc_pawn, mvc_pawn_ocl or full");
    sub->add_option("--epochs", o.epochs, "total epochs including warm-up");
    sub->add_option("--lambda", o.lambda, "contrastive loss weight");
    sub->add_option("--batch-size", o.batch_size, "training batch size");
    sub->add_option("--dataset", o.dataset, "dataset file");
  };

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic two-view dataset");
  common(gen);
  CLI::App* train = app.add_subcommand("train", "train one mode and write checkpoint + history");
  common(train);
  training(train);
  CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate all six modes");
  common(ablate);
  training(ablate);
  CLI::App* inspect = app.add_subcommand("inspect", "per-patient predictions and view weights");
  common(inspect);
  inspect->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  inspect->add_option("--dataset", o.dataset, "dataset file");
  inspect->add_option("--ids", o.ids, "comma-separated patient ids");
  inspect->add_flag("--csv", o.csv, "machine-readable output");
  CLI::App* grad = app.add_subcommand("check-gradients", "finite-difference gradient suite");
  common(grad);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig config;
    if (!o.config_path.empty()) apply_config_file(config, o.config_path);
    for (const auto& s : o.settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      apply_setting(config, trim(std::string_view(s).substr(0, eq)), std::string_view(s).substr(eq + 1));
    }
    if (o.seed) config.set_all_seeds(*o.seed);
    if (o.mode) apply_setting(config, "run.mode", *o.mode);
    if (o.out) config.out = *o.out;
    if (o.dataset) config.dataset = *o.dataset;
    if (o.checkpoint) config.checkpoint = *o.checkpoint;
    if (o.ids) apply_setting(config, "run.ids", *o.ids);
    if (o.epochs) config.train.epochs = *o.epochs;
    if (o.batch_size) config.train.batch_size = *o.batch_size;
    if (o.lambda) config.train.lambda = *o.lambda;

    if (gen->parsed()) return cmd_generate(config, out, err);
    if (train->parsed()) return cmd_train(config, out, err);
    if (ablate->parsed()) return cmd_ablate(config, out, err);
    if (inspect->parsed()) return cmd_inspect(config, o.csv, out, err);
    return cmd_check_gradients(config, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const LookupError& e) {
    err << "lookup error: " << e.what() << "\n";
    return kExitLookup;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace mvpd
