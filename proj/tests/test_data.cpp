#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "mvpd/binary_io.hpp"
#include "mvpd/data.hpp"
#include "support.hpp"

using namespace mvpd;
using mvpd::testing::Gen;

namespace {

GenConfig small_config(std::uint64_t seed = 1) {
  GenConfig c;
  c.n_patients = 40;
  c.image_side = 16;
  c.seed = seed;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mvpd_data_" + name);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Log-likelihood of an image under the generator for one class: pixels are
// N(0.5 + strength * A * pattern, sigma) clamped to [0, 1], so the two
// endpoints carry the censored tail mass.
double log_likelihood(const Tensor& image, const Tensor& pattern, double strength, const GenConfig& c) {
  double ll = 0.0;
  for (std::size_t p = 0; p < image.size(); ++p) {
    const double mu = 0.5 + strength * c.amplitude * pattern[p];
    const double y = image[p];
    if (y <= 0.0) ll += std::log(normal_cdf((0.0 - mu) / c.noise_std));
    else if (y >= 1.0) ll += std::log(1.0 - normal_cdf((1.0 - mu) / c.noise_std));
    else ll += -0.5 * std::pow((y - mu) / c.noise_std, 2);  // shared constants dropped
  }
  return ll;
}

// Bayes-rule accuracy of one view on a dataset with known strengths.
double bayes_accuracy(const Dataset& ds, View view, const GenConfig& c) {
  const Tensor p0 = class_pattern(view, 0, c.image_side), p1 = class_pattern(view, 1, c.image_side);
  std::size_t correct = 0;
  for (const Sample& s : ds.samples) {
    const double strength = view == View::Transverse ? s.rho : 1.0 - s.rho;
    const Tensor& img = view == View::Transverse ? s.image_t : s.image_l;
    const double score = log_likelihood(img, p1, strength, c) + std::log(c.balance) -
                         log_likelihood(img, p0, strength, c) - std::log(1.0 - c.balance);
    correct += static_cast<std::size_t>((score >= 0.0) == (s.label == 1));
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// Plain logistic regression on centred pixels, trained by full-batch gradient
// descent on the first 70% and scored on the rest.
double logistic_probe(const std::vector<const Tensor*>& x, const std::vector<int>& y) {
  const std::size_t n = x.size(), n_train = n * 7 / 10, d = x.front()->size();
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  auto logit = [&](std::size_t i) {
    double z = b;
    for (std::size_t k = 0; k < d; ++k) z += w[k] * ((*x[i])[k] - 0.5);
    return z;
  };
  const double lr = 0.5, l2 = 0.01;
  for (int it = 0; it < 200; ++it) {
    std::vector<double> g(d, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) {
      const double e = 1.0 / (1.0 + std::exp(-logit(i))) - y[i];
      gb += e;
      for (std::size_t k = 0; k < d; ++k) g[k] += e * ((*x[i])[k] - 0.5);
    }
    for (std::size_t k = 0; k < d; ++k) w[k] -= lr * (g[k] / static_cast<double>(n_train) + l2 * w[k]);
    b -= lr * gb / static_cast<double>(n_train);
  }
  std::size_t correct = 0;
  for (std::size_t i = n_train; i < n; ++i) correct += static_cast<std::size_t>((logit(i) >= 0.0) == (y[i] == 1));
  return static_cast<double>(correct) / static_cast<double>(n - n_train);
}

}  // namespace

TEST(Generator, DeterministicAndSeedSensitive) {
  const Dataset a = generate_synthetic(small_config(3));
  const Dataset b = generate_synthetic(small_config(3));
  const Dataset c = generate_synthetic(small_config(4));
  ASSERT_EQ(a.size(), 40u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i].image_t, b.samples[i].image_t);
    EXPECT_EQ(a.samples[i].rho, b.samples[i].rho);
  }
  EXPECT_NE(a.samples[0].image_t, c.samples[0].image_t);
}

TEST(Generator, PatientStreamsAreIndependentOfCount) {
  GenConfig big = small_config(5);
  big.n_patients = 80;
  const Dataset a = generate_synthetic(small_config(5));
  const Dataset b = generate_synthetic(big);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i].patient_id, b.samples[i].patient_id);
    EXPECT_EQ(a.samples[i].image_l, b.samples[i].image_l);
  }
}

TEST(Generator, ShapesRangesAndIds) {
  const Dataset ds = generate_synthetic(small_config());
  std::set<std::uint32_t> ids;
  for (const Sample& s : ds.samples) {
    ids.insert(s.patient_id);
    ASSERT_EQ(s.image_t.size(), 256u);
    ASSERT_EQ(s.image_l.size(), 256u);
    for (double v : s.image_t.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (double v : s.image_l.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    ASSERT_TRUE(s.rho >= 0.0 && s.rho <= 1.0);
    ASSERT_TRUE(s.label == 0 || s.label == 1);
  }
  EXPECT_EQ(ids.size(), ds.size());
  EXPECT_EQ(*ids.begin(), 1u);
}

TEST(Generator, ClassBalanceAndRhoDistribution) {
  GenConfig c;
  c.n_patients = 10000;
  c.image_side = 4;
  const Dataset ds = generate_synthetic(c);
  double malignant = 0.0, rho = 0.0;
  for (const Sample& s : ds.samples) {
    malignant += s.label;
    rho += s.rho;
  }
  EXPECT_NEAR(malignant / 10000.0, 0.7, 0.03);
  EXPECT_NEAR(rho / 10000.0, 0.5, 0.02);
}

TEST(Generator, ConfigValidation) {
  GenConfig c;
  c.balance = 1.0;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = GenConfig{};
  c.rho_min = 0.8;
  c.rho_max = 0.2;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = GenConfig{};
  c.noise_std = 0.0;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
}

TEST(Patterns, ViewsUseDifferentTemplates) {
  for (int label : {0, 1}) {
    const Tensor t = class_pattern(View::Transverse, label, 32);
    const Tensor l = class_pattern(View::Longitudinal, label, 32);
    EXPECT_NE(t, l);
    for (double v : t.data()) ASSERT_TRUE(v == 0.0 || v == 0.5 || v == -0.5);
  }
  EXPECT_NE(class_pattern(View::Transverse, 0, 32), class_pattern(View::Transverse, 1, 32));
  EXPECT_NE(class_pattern(View::Longitudinal, 0, 32), class_pattern(View::Longitudinal, 1, 32));
}

TEST(Generator, BayesOracleAtFullTransverseInformativeness) {
  GenConfig c;
  c.rho_min = c.rho_max = 1.0;
  c.n_patients = 400;
  const Dataset ds = generate_synthetic(c);
  EXPECT_GT(bayes_accuracy(ds, View::Transverse, c), 0.9);
  // The longitudinal view carries no signal at rho = 1: Bayes falls back to
  // the prior and scores the majority-class rate.
  double malignant = 0.0;
  for (const Sample& s : ds.samples) malignant += s.label;
  EXPECT_DOUBLE_EQ(bayes_accuracy(ds, View::Longitudinal, c), malignant / static_cast<double>(ds.size()));
}

TEST(Generator, LogisticProbeOnHighRhoSubpopulation) {
  // Balanced classes, so that chance is 0.5 rather than the majority rate.
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    GenConfig c;
    c.balance = 0.5;
    c.seed = seed;
    const Dataset ds = generate_synthetic(c);
    std::vector<const Tensor*> xt, xl;
    std::vector<int> y;
    for (const Sample& s : ds.samples)
      if (s.rho > 0.8) {
        xt.push_back(&s.image_t);
        xl.push_back(&s.image_l);
        y.push_back(s.label);
      }
    ASSERT_GT(y.size(), 60u);
    EXPECT_GE(logistic_probe(xt, y), 0.9) << "seed " << seed;
    EXPECT_LE(logistic_probe(xl, y), 0.6) << "seed " << seed;
  }
}

// ---------------------------------------------------------------------------

TEST(Split, SizesFollowSevenOneTwo) {
  GenConfig c = small_config();
  c.n_patients = 600;
  c.image_side = 4;
  const Splits s = split(generate_synthetic(c), SplitSpec{});
  EXPECT_EQ(s.train.size(), 420u);
  EXPECT_EQ(s.val.size(), 60u);
  EXPECT_EQ(s.test.size(), 120u);
}

TEST(Split, FloorsAndRemainder) {
  GenConfig c = small_config();
  c.n_patients = 7;
  const Splits s = split(generate_synthetic(c), SplitSpec{});
  EXPECT_EQ(s.train.size(), 4u);
  EXPECT_EQ(s.val.size(), 0u);
  EXPECT_EQ(s.test.size(), 3u);
}

TEST(Split, PatientLevelPartitionAndDeterminism) {
  const Dataset ds = generate_synthetic(small_config());
  const Splits a = split(ds, SplitSpec{});
  const Splits b = split(ds, SplitSpec{});
  std::multiset<std::uint32_t> ids;
  for (const Dataset* part : {&a.train, &a.val, &a.test})
    for (const Sample& s : part->samples) ids.insert(s.patient_id);
  EXPECT_EQ(ids.size(), ds.size());
  EXPECT_EQ(std::set<std::uint32_t>(ids.begin(), ids.end()).size(), ds.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train.samples[i].patient_id, b.train.samples[i].patient_id);

  // Input order does not matter.
  Dataset reversed = ds;
  std::reverse(reversed.samples.begin(), reversed.samples.end());
  const Splits r = split(reversed, SplitSpec{});
  for (std::size_t i = 0; i < a.test.size(); ++i) EXPECT_EQ(a.test.samples[i].patient_id, r.test.samples[i].patient_id);
}

TEST(Split, RejectsBadRatios) {
  const Dataset ds = generate_synthetic(small_config());
  EXPECT_THROW(split(ds, SplitSpec{0.5, 0.5, 0.5, 1}), std::invalid_argument);
  EXPECT_THROW(split(Dataset{}, SplitSpec{}), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(ImageOps, ResizeIdentityAndConstant) {
  Gen gen(41);
  const Tensor img = gen.tensor({64}, 0.0, 1.0);
  EXPECT_EQ(resize(img, 8), img);
  const Tensor flat = Tensor::filled({64}, 0.3);
  const Tensor big = resize(flat, 13);
  for (double v : big.data()) EXPECT_NEAR(v, 0.3, 1e-15);
}

TEST(ImageOps, HalvingAveragesBlocks) {
  Gen gen(42);
  const Tensor img = gen.tensor({16}, 0.0, 1.0);
  const Tensor half = resize(img, 2);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x) {
      const double avg = (img[(2 * y) * 4 + 2 * x] + img[(2 * y) * 4 + 2 * x + 1] + img[(2 * y + 1) * 4 + 2 * x] +
                          img[(2 * y + 1) * 4 + 2 * x + 1]) / 4.0;
      EXPECT_NEAR(half[y * 2 + x], avg, 1e-15);
    }
}

TEST(ImageOps, FlipAndRotate) {
  Gen gen(43);
  const Tensor img = gen.tensor({36}, 0.0, 1.0);
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
  EXPECT_EQ(flip_horizontal(img)[0], img[5]);
  EXPECT_EQ(rotate(img, 0.0), img);
  const Tensor quarter = rotate(img, 90.0);
  // Quarter turn about the centre maps pixels onto pixels.
  Tensor back = rotate(rotate(rotate(quarter, 90.0), 90.0), 90.0);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 1e-12);
  EXPECT_THROW(flip_horizontal(Tensor({5})), ShapeError);
}

TEST(ImageOps, RescaleKeepsSide) {
  Gen gen(44);
  const Tensor img = gen.tensor({256}, 0.0, 1.0);
  EXPECT_EQ(rescale(img, 1.0), img);
  for (double f : {0.9, 1.1, 0.5, 2.0}) {
    const Tensor out = rescale(img, f);
    ASSERT_EQ(out.size(), 256u);
    for (double v : out.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
  // Shrinking pads with zeros at the border.
  EXPECT_EQ(rescale(Tensor::filled({256}, 1.0), 0.5)[0], 0.0);
}

TEST(Augment, SharedDrawPreservesRangeAndShape) {
  const Dataset ds = generate_synthetic(small_config());
  std::mt19937_64 rng(7);
  for (const Sample& s : ds.samples) {
    Sample twin = s;
    twin.image_l = twin.image_t;
    const Sample out = augment(twin, AugmentConfig{}, rng);
    EXPECT_EQ(out.image_t, out.image_l);  // one draw for both views
    EXPECT_EQ(out.label, s.label);
    EXPECT_EQ(out.rho, s.rho);
    ASSERT_EQ(out.image_t.size(), s.image_t.size());
    for (double v : out.image_t.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Augment, DrawConsumesFixedStream) {
  AugmentConfig never;
  never.p_flip = never.p_rotate = never.p_scale = 0.0;
  std::mt19937_64 a(9), b(9);
  draw_augmentation(never, a);
  draw_augmentation(AugmentConfig{}, b);
  EXPECT_EQ(a(), b());
}

// ---------------------------------------------------------------------------

TEST(Mixup, Endpoints) {
  const Dataset ds = generate_synthetic(small_config());
  std::vector<TrainingExample> batch;
  for (std::size_t i = 0; i < 4; ++i) batch.push_back(to_training_example(ds.samples[i]));
  const std::vector<std::size_t> partner = {1, 0, 3, 2};
  const auto same = mixup_with(batch, 1.0, partner);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(same[i].image_t, batch[i].image_t);
    EXPECT_EQ(same[i].label, batch[i].label);
  }

  TrainingExample benign = batch[0], malignant = batch[1];
  benign.label = {1.0, 0.0};
  malignant.label = {0.0, 1.0};
  const auto mixed = mixup_with({benign, malignant}, 0.5, {1, 0});
  EXPECT_EQ(mixed[0].label, (std::array<double, 2>{0.5, 0.5}));
  EXPECT_NEAR(mixed[0].image_l[3], 0.5 * benign.image_l[3] + 0.5 * malignant.image_l[3], 1e-15);
  EXPECT_THROW(mixup_with(batch, 0.5, {0}), std::invalid_argument);
}

TEST(Mixup, SoftLabelsStayOnSimplex) {
  const Dataset ds = generate_synthetic(small_config());
  std::vector<TrainingExample> batch;
  for (const Sample& s : ds.samples) batch.push_back(to_training_example(s));
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    for (const auto& ex : mixup(batch, 0.2, rng)) {
      ASSERT_NEAR(ex.label[0] + ex.label[1], 1.0, 1e-15);
      for (double v : ex.image_t.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    }
  }
}

TEST(Mixup, BetaSamplesInUnitIntervalWithSymmetricMean) {
  std::mt19937_64 rng(4);
  double mean = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double v = sample_beta(0.2, 0.2, rng);
    ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    mean += v;
  }
  EXPECT_NEAR(mean / 20000.0, 0.5, 0.02);
}

// ---------------------------------------------------------------------------

TEST(DatasetFile, RoundTripIsExact) {
  const Dataset ds = generate_synthetic(small_config());
  const auto path = temp_path("round.mvus");
  save_dataset(path.string(), ds);
  const Dataset back = load_dataset(path.string());
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.side, ds.side);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.samples[i].patient_id, ds.samples[i].patient_id);
    EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
    EXPECT_EQ(back.samples[i].rho, ds.samples[i].rho);
    EXPECT_EQ(back.samples[i].image_t, ds.samples[i].image_t);
    EXPECT_EQ(back.samples[i].image_l, ds.samples[i].image_l);
  }
  std::filesystem::remove(path);
}

TEST(DatasetFile, ByteLayout) {
  Dataset ds;
  ds.side = 1;
  Sample s;
  s.patient_id = 0x01020304;
  s.label = 1;
  s.rho = 0.25;
  s.image_t = Tensor::vector({1.0});
  s.image_l = Tensor::vector({0.0});
  ds.samples.push_back(s);
  const auto path = temp_path("layout.mvus");
  save_dataset(path.string(), ds);
  const auto bytes = read_file(path.string());
  // magic 4 + version 2 + count 4 + side 2 + id 4 + label 1 + rho 8 + 2 pixels 16
  ASSERT_EQ(bytes.size(), 41u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MVUS");
  EXPECT_EQ(bytes[6], 1u);   // count, little-endian
  EXPECT_EQ(bytes[10], 1u);  // side
  EXPECT_EQ(bytes[12], 0x04);
  EXPECT_EQ(bytes[15], 0x01);
  EXPECT_EQ(bytes[16], 1u);
  std::filesystem::remove(path);
}

TEST(DatasetFile, RejectsCorruption) {
  const auto path = temp_path("bad.mvus");
  write_file(path.string(), {'N', 'O', 'P', 'E', 1, 0});
  EXPECT_THROW(load_dataset(path.string()), FormatError);
  save_dataset(path.string(), generate_synthetic(small_config()));
  auto bytes = read_file(path.string());
  bytes.pop_back();
  write_file(path.string(), bytes);
  EXPECT_THROW(load_dataset(path.string()), FormatError);
  std::filesystem::remove(path);
}

TEST(Manifest, RecordsConfigAndSeed) {
  const GenConfig c = small_config(9);
  const std::string text = manifest_text(c, generate_synthetic(c));
  for (const char* key : {"n_patients=40\n", "image_side=16\n", "gen_seed=9\n", "amplitude=", "noise_std=", "balance="})
    EXPECT_NE(text.find(key), std::string::npos) << key;
}
