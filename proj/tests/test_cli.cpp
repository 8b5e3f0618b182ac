#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mvpd/cli.hpp"

using namespace mvpd;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mvpd");
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::size_t count_cells(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mvpd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = (dir_ / "small.cfg").string();
    std::ofstream(config_) << "# small, fast run\n"
                              "gen.n_patients=60\n"
                              "gen.image_side=16\n"
                              "model.image_side=16\n"
                              "model.embed_dim=8\n"
                              "model.feature_dim=8\n"
                              "model.head_hidden=8\n"
                              "model.pawn_hidden=8,4\n"
                              "train.epochs=3\n"
                              "train.batch_size=16\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string make_dataset() {
    const std::string p = path("data.mvus");
    EXPECT_EQ(cli({"generate", "--config", config_, "--out", p}).code, kExitOk);
    return p;
  }

  fs::path dir_;
  std::string config_;
};

}  // namespace

TEST(RunConfig, RenderRoundTrips) {
  RunConfig c;
  c.gen.amplitude = 0.123456789012345;
  c.train.warmup_epochs = 4;
  c.model.pawn_hidden = {7, 5};
  c.mode = Mode::MvcPawnOcl;
  c.seeds = {3, 9};
  c.ids = {1, 2};
  RunConfig back;
  apply_config_text(back, render_config(c));
  EXPECT_EQ(render_config(back), render_config(c));
  EXPECT_EQ(back.gen.amplitude, c.gen.amplitude);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(lines(render_config(c)).size(), config_keys().size());
}

TEST(RunConfig, RejectsBadInput) {
  RunConfig c;
  EXPECT_THROW(apply_setting(c, "gen.nonsense", "1"), ConfigError);
  EXPECT_THROW(apply_setting(c, "gen.balance", "abc"), ConfigError);
  EXPECT_THROW(apply_setting(c, "train.epochs", "-3"), ConfigError);
  EXPECT_THROW(apply_setting(c, "train.mixup", "maybe"), ConfigError);
  EXPECT_THROW(apply_setting(c, "run.mode", "triple_view"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "just words\n"), ConfigError);
  c.split.train = 0.9;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, SeedFlagSetsEverySeed) {
  RunConfig c;
  c.set_all_seeds(7);
  EXPECT_EQ(c.gen.seed, 7u);
  EXPECT_EQ(c.split.seed, 7u);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{7});
}

TEST_F(CliTest, GenerateIsDeterministicAndEchoesConfig) {
  const CliRun a = cli({"generate", "--config", config_, "--out", path("a.mvus")});
  const CliRun b = cli({"generate", "--config", config_, "--out", path("b.mvus")});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  EXPECT_EQ(read_bytes(path("a.mvus")).substr(0, 4), "MVUS");
  EXPECT_EQ(read_bytes(path("a.mvus")), read_bytes(path("b.mvus")));
  EXPECT_TRUE(fs::exists(path("a.mvus.manifest")));
  EXPECT_NE(a.out.find("samples=60"), std::string::npos);
  for (const auto& key : config_keys()) EXPECT_NE(a.err.find("\n" + key + "="), std::string::npos) << key;
  EXPECT_NE(a.err.find("gen.n_patients=60\n"), std::string::npos);
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
  EXPECT_EQ(cli({"generate", "--set", "gen.colour=3", "--out", path("x")}).code, kExitConfig);
  EXPECT_EQ(cli({"generate", "--set", "gen.balance=1.5", "--out", path("x")}).code, kExitConfig);
  EXPECT_EQ(cli({"generate", "--config", path("missing.cfg"), "--out", path("x")}).code, kExitConfig);
  EXPECT_EQ(cli({"generate", "--no-such-flag"}).code, kExitConfig);
  EXPECT_EQ(cli({}).code, kExitConfig);
  EXPECT_EQ(cli({"train", "--mode", "everything"}).code, kExitConfig);
  std::ofstream(path("bad.cfg")) << "train.epochs=3\nwhat.is.this=1\n";
  EXPECT_EQ(cli({"generate", "--config", path("bad.cfg"), "--out", path("x")}).code, kExitConfig);
}

TEST_F(CliTest, UnwritableOutputFails) {
  const CliRun r = cli({"generate", "--config", config_, "--out", path("no/such/dir/data.mvus")});
  EXPECT_NE(r.code, kExitOk);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, TrainWritesArtifactsDeterministically) {
  const std::string data = make_dataset();
  const CliRun a = cli({"train", "--config", config_, "--dataset", data, "--mode", "full", "--out", path("a")});
  const CliRun b = cli({"train", "--config", config_, "--dataset", data, "--mode", "full", "--out", path("b")});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  for (const char* f : {"checkpoint.mvck", "history.csv"}) {
    ASSERT_TRUE(fs::exists(dir_ / "a" / f)) << f;
    EXPECT_EQ(read_bytes(dir_ / "a" / f), read_bytes(dir_ / "b" / f)) << f;
  }
  EXPECT_EQ(lines(read_bytes(dir_ / "a" / "history.csv")).size(), 4u);
  EXPECT_EQ(read_bytes(dir_ / "a" / "config.txt"), a.err.substr(a.err.find('\n') + 1));
}

TEST_F(CliTest, MvcOnlyCheckpointHasNoPawn) {
  const std::string data = make_dataset();
  ASSERT_EQ(cli({"train", "--config", config_, "--dataset", data, "--mode", "mvc_only", "--out", path("m")}).code,
            kExitOk);
  const Model m = load_checkpoint(path("m/checkpoint.mvck"));
  for (const auto& [name, _] : m.params) EXPECT_FALSE(name.starts_with(param::kPawn)) << name;
  const CliRun r = cli({"inspect", "--checkpoint", path("m/checkpoint.mvck"), "--dataset", data, "--csv"});
  ASSERT_EQ(r.code, kExitOk);
  const auto rows = lines(r.out);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_NE(rows[i].find(",0.500000000,0.500000000,"), std::string::npos);
}

TEST_F(CliTest, CorruptDatasetExitsThree) {
  std::ofstream(path("junk.mvus")) << "JUNKJUNKJUNK";
  EXPECT_EQ(cli({"train", "--config", config_, "--dataset", path("junk.mvus"), "--out", path("t")}).code, kExitData);
  EXPECT_EQ(cli({"train", "--config", config_, "--dataset", path("absent.mvus"), "--out", path("t")}).code,
            kExitData);
}

TEST_F(CliTest, InspectOutputs) {
  const std::string data = make_dataset();
  ASSERT_EQ(cli({"train", "--config", config_, "--dataset", data, "--out", path("f")}).code, kExitOk);
  const std::string ckpt = path("f/checkpoint.mvck");

  const CliRun text = cli({"inspect", "--checkpoint", ckpt, "--dataset", data, "--ids", "3,1,12"});
  ASSERT_EQ(text.code, kExitOk) << text.err;
  const auto rows = lines(text.out);
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream in(rows[i]);
    std::uint32_t id;
    double pt, pl, fused, wt, wl;
    in >> id >> pt >> pl >> fused >> wt >> wl;
    EXPECT_NEAR(wt + wl, 1.0, 1e-4 + 1e-6);
  }
  EXPECT_EQ(rows[1].rfind("3 ", 0), 0u);

  const CliRun csv = cli({"inspect", "--checkpoint", ckpt, "--dataset", data, "--csv"});
  ASSERT_EQ(csv.code, kExitOk);
  const auto crow = lines(csv.out);
  EXPECT_EQ(crow.size(), 61u);
  for (const auto& line : crow) EXPECT_EQ(count_cells(line), 8u) << line;
  for (std::size_t i = 1; i < crow.size(); ++i) {
    std::vector<double> v;
    std::istringstream in(crow[i]);
    std::string cell;
    while (std::getline(in, cell, ',')) v.push_back(std::stod(cell));
    EXPECT_NEAR(v[4] + v[5], 1.0, 1e-6);
  }

  EXPECT_EQ(cli({"inspect", "--checkpoint", ckpt, "--dataset", data, "--ids", "1,4242"}).code, kExitLookup);
  EXPECT_EQ(cli({"inspect", "--checkpoint", data, "--dataset", data}).code, kExitData);
}

TEST_F(CliTest, AblateProducesSixRowsOnOneSplit) {
  const std::string data = make_dataset();
  const CliRun r = cli({"ablate", "--config", config_, "--dataset", data, "--out", path("abl"), "--epochs", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto csv = lines(read_bytes(dir_ / "abl" / "report.csv"));
  ASSERT_EQ(csv.size(), 7u);
  for (std::size_t i = 0; i < kAllModes.size(); ++i) EXPECT_EQ(csv[i + 1].rfind(std::string(mode_name(kAllModes[i])) + ",", 0), 0u);

  std::vector<std::string> ids;
  for (Mode m : kAllModes) {
    std::string column;
    for (const auto& line : lines(read_bytes(dir_ / "abl" / "seed_1" / ("inspections_" + std::string(mode_name(m)) + ".csv"))))
      column += line.substr(0, line.find(',')) + " ";
    ids.push_back(column);
  }
  for (const auto& c : ids) EXPECT_EQ(c, ids.front());
  EXPECT_TRUE(fs::exists(dir_ / "abl" / "ablation_runs.csv"));
}

TEST_F(CliTest, FailedModesGiveFailureRows) {
  // Three patients leave the validation split empty, so every mode fails to train.
  const CliRun r = cli({"ablate", "--config", config_, "--set", "gen.n_patients=3", "--out", path("fail")});
  EXPECT_EQ(r.code, kExitPartialAblation) << r.err;
  const std::string report = read_bytes(dir_ / "fail" / "report.md");
  EXPECT_NE(report.find("| full | FAILED: seed 1: validation split is empty |"), std::string::npos) << report;
  EXPECT_EQ(lines(report).size(), 8u);
}

TEST(MeanReport, FailureInAnySeedFailsTheRow) {
  ModeOutcome good{Mode::MvcOnly, 1, Evaluation{{3, 1, 4, 2}, {}}, std::nullopt, 5, ""};
  ModeOutcome other{Mode::MvcOnly, 2, Evaluation{{5, 1, 2, 2}, {}}, std::nullopt, 5, ""};
  ModeOutcome bad{Mode::Full, 1, std::nullopt, std::nullopt, 0, "diverged"};
  // Means over the two mvc_only runs: sen (3/5 + 5/7) / 2, spe (4/5 + 2/3) / 2,
  // pre (3/4 + 5/6) / 2, f1 (2/3 + 10/13) / 2.
  const Report r = mean_report({bad, good, other});
  EXPECT_EQ(r.csv, "method,acc,sen,spe,pre,f1\nmvc_only,70.00,65.71,73.33,79.17,71.79\nfull,failed,,,,\n");
  AblationResult a;
  a.runs = {good, bad};
  EXPECT_FALSE(a.complete());
  a.runs = {good};
  EXPECT_TRUE(a.complete());
}

TEST(CheckGradients, PrimitivesReportedAndVerdictMatchesSuite) {
  const CliRun r = cli({"check-gradients"});
  for (const char* name : {"add", "matmul", "softmax", "fused_cross_entropy", "total_loss_vacl"})
    EXPECT_NE(r.out.find(name), std::string::npos) << name;
  const bool passed = r.out.find("gradient suite passed") != std::string::npos;
  EXPECT_EQ(r.code, passed ? kExitOk : kExitFailure);
}
