#pragma once

// Synthetic two-view dataset with a hidden per-sample informativeness rho,
// patient-level splitting, geometric augmentation, mixup, and the dataset
// file format.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mvpd/model.hpp"
#include "mvpd/tensor.hpp"

namespace mvpd {

struct Sample {
  std::uint32_t patient_id = 0;
  Tensor image_t;  // [side*side], values in [0, 1]
  Tensor image_l;
  int label = 0;     // 0 benign, 1 malignant
  double rho = 0.0;  // evaluation-only; never fed to the model
};

struct Dataset {
  std::size_t side = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

struct GenConfig {
  std::size_t n_patients = 600;
  std::size_t image_side = 32;
  double balance = 0.7;  // fraction malignant
  double amplitude = 0.2;
  double noise_std = 0.2;
  double rho_min = 0.0;
  double rho_max = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Class template in {-0.5, 0, +0.5}: a striped lesion centred in the image.
/// Transverse: disk, period-4 stripes, vertical for malignant. Longitudinal:
/// ellipse, period-6 stripes, horizontal for malignant.
Tensor class_pattern(View view, int label, std::size_t side);

/// Per patient: label ~ Bernoulli(balance), rho ~ U[rho_min, rho_max];
/// image_t = clamp(0.5 + rho * amplitude * pattern_t + noise),
/// image_l = clamp(0.5 + (1 - rho) * amplitude * pattern_l + noise).
/// Each patient draws from its own stream seeded by (seed, patient_id).
Dataset generate_synthetic(const GenConfig& config);

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  std::uint64_t seed = 1;
};

struct Splits {
  Dataset train, val, test;
};

/// Random patient-level partition; train/val sizes are floored, test gets the rest.
Splits split(const Dataset& dataset, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Image ops on square images stored as [side*side].

/// Bilinear resize, half-pixel centres (corners not aligned).
Tensor resize(const Tensor& image, std::size_t target_side);
Tensor flip_horizontal(const Tensor& image);
/// Rotation about the image centre, bilinear, zero fill outside the source.
Tensor rotate(const Tensor& image, double degrees);
/// Resize by `factor`, then centre-crop or zero-pad back to the original side.
Tensor rescale(const Tensor& image, double factor);

struct AugmentConfig {
  double p_flip = 0.5;
  double p_rotate = 0.5;
  double p_scale = 0.5;
  double max_rotation_deg = 15.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
};

struct AugmentDraw {
  bool flip = false;
  bool rotate = false;
  double angle_deg = 0.0;
  bool scale = false;
  double factor = 1.0;
};

AugmentDraw draw_augmentation(const AugmentConfig& config, std::mt19937_64& rng);
Tensor apply_augmentation(const Tensor& image, const AugmentDraw& draw);
/// One draw applied to both views; label and rho unchanged.
Sample augment(const Sample& sample, const AugmentConfig& config, std::mt19937_64& rng);

/// A sample as fed to training: possibly mixed images and a soft label.
struct TrainingExample {
  std::uint32_t patient_id = 0;
  Tensor image_t;
  Tensor image_l;
  std::array<double, 2> label{};
};

TrainingExample to_training_example(const Sample& sample);

/// x <- lambda * x + (1 - lambda) * x[partner] for both views and the labels.
std::vector<TrainingExample> mixup_with(const std::vector<TrainingExample>& batch, double lambda,
                                        const std::vector<std::size_t>& partner);
/// lambda ~ Beta(alpha, alpha), partner = random permutation. Batches of one
/// are returned unchanged.
std::vector<TrainingExample> mixup(const std::vector<TrainingExample>& batch, double alpha, std::mt19937_64& rng);

double sample_beta(double alpha, double beta, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Dataset file: "MVUS", u16 version, u32 count, u16 side, then per sample
// u32 patient_id, u8 label, f64 rho, side*side f64 transverse, side*side f64
// longitudinal; little-endian.

inline constexpr std::uint16_t kDatasetVersion = 1;

void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

/// key=value sidecar describing the generator run.
std::string manifest_text(const GenConfig& config, const Dataset& dataset);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace mvpd
