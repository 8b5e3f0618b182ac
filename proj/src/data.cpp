#include "mvpd/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mvpd/binary_io.hpp"

namespace mvpd {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over the combined words
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void GenConfig::validate() const {
  if (n_patients == 0) throw std::invalid_argument("n_patients must be positive");
  if (image_side == 0) throw std::invalid_argument("image_side must be positive");
  if (!(balance > 0.0 && balance < 1.0)) throw std::invalid_argument("balance must be in (0, 1)");
  if (!(noise_std > 0.0)) throw std::invalid_argument("noise_std must be positive");
  if (amplitude < 0.0) throw std::invalid_argument("amplitude must be non-negative");
  if (!(0.0 <= rho_min && rho_min <= rho_max && rho_max <= 1.0))
    throw std::invalid_argument("rho range must satisfy 0 <= rho_min <= rho_max <= 1");
}

Tensor class_pattern(View view, int label, std::size_t side) {
  Tensor out({side * side});
  const double n = static_cast<double>(side);
  const double centre = (n - 1.0) / 2.0;
  // Transverse: round lesion; longitudinal: the same lesion elongated along x.
  const bool trans = view == View::Transverse;
  const double ax = trans ? 0.3 * n : 0.4 * n;
  const double ay = trans ? 0.3 * n : 0.22 * n;
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double dx = (static_cast<double>(x) - centre) / ax, dy = (static_cast<double>(y) - centre) / ay;
      if (dx * dx + dy * dy > 1.0) continue;
      std::size_t phase = 0;
      if (trans) phase = label ? x / 2 : y / 2;  // period 4: vertical / horizontal
      else phase = label ? y / 3 : x / 3;        // period 6: horizontal / vertical
      out[y * side + x] = phase % 2 == 0 ? 0.5 : -0.5;
    }
  return out;
}

Dataset generate_synthetic(const GenConfig& config) {
  config.validate();
  const std::size_t side = config.image_side;
  const std::array<Tensor, 2> pattern_t = {class_pattern(View::Transverse, 0, side),
                                           class_pattern(View::Transverse, 1, side)};
  const std::array<Tensor, 2> pattern_l = {class_pattern(View::Longitudinal, 0, side),
                                           class_pattern(View::Longitudinal, 1, side)};
  Dataset ds;
  ds.side = side;
  ds.samples.reserve(config.n_patients);
  for (std::size_t i = 0; i < config.n_patients; ++i) {
    Sample s;
    s.patient_id = static_cast<std::uint32_t>(i + 1);
    std::mt19937_64 rng(mix_seed(config.seed, s.patient_id));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, config.noise_std);
    s.label = unit(rng) < config.balance ? 1 : 0;
    s.rho = config.rho_min + (config.rho_max - config.rho_min) * unit(rng);
    auto render = [&](const Tensor& pattern, double strength) {
      Tensor img({side * side});
      for (std::size_t p = 0; p < img.size(); ++p)
        img[p] = std::clamp(0.5 + strength * config.amplitude * pattern[p] + noise(rng), 0.0, 1.0);
      return img;
    };
    s.image_t = render(pattern_t[s.label], s.rho);
    s.image_l = render(pattern_l[s.label], 1.0 - s.rho);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Splits split(const Dataset& dataset, const SplitSpec& spec) {
  if (dataset.samples.empty()) throw std::invalid_argument("cannot split an empty dataset");
  if (spec.train < 0 || spec.val < 0 || spec.test < 0 || std::fabs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Sort by patient id first so the split depends only on the id set.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset.samples[a].patient_id < dataset.samples[b].patient_id;
  });
  std::mt19937_64 rng(mix_seed(spec.seed, 0x5b117));
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(spec.val * static_cast<double>(n) + 1e-9));
  Splits out;
  out.train.side = out.val.side = out.test.side = dataset.side;
  for (std::size_t k = 0; k < n; ++k) {
    Dataset& target = k < n_train ? out.train : (k < n_train + n_val ? out.val : out.test);
    target.samples.push_back(dataset.samples[order[k]]);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t square_side(const Tensor& image) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(image.size()))));
  if (side * side != image.size() || (image.rank() == 2 && image.shape()[0] != image.shape()[1]))
    throw ShapeError("image is not square: " + to_string(image.shape()));
  return side;
}

double sample_zero_fill(const Tensor& image, std::size_t side, double sx, double sy) {
  const double fx = std::floor(sx), fy = std::floor(sy);
  const double wx = sx - fx, wy = sy - fy;
  const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const long n = static_cast<long>(side);
  auto px = [&](long x, long y) { return (x < 0 || y < 0 || x >= n || y >= n) ? 0.0 : image[static_cast<std::size_t>(y * n + x)]; };
  return (1 - wy) * ((1 - wx) * px(x0, y0) + wx * px(x0 + 1, y0)) +
         wy * ((1 - wx) * px(x0, y0 + 1) + wx * px(x0 + 1, y0 + 1));
}

}  // namespace

Tensor resize(const Tensor& image, std::size_t target) {
  const std::size_t side = square_side(image);
  if (target == 0) throw std::invalid_argument("resize target must be positive");
  if (target == side) return Tensor({side * side}, image.values());
  Tensor out({target * target});
  const double ratio = static_cast<double>(side) / static_cast<double>(target);
  auto source = [&](std::size_t i, std::size_t& lo, std::size_t& hi, double& w) {
    double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(side - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, side - 1);
    w = s - static_cast<double>(lo);
  };
  for (std::size_t y = 0; y < target; ++y) {
    std::size_t y0, y1;
    double wy;
    source(y, y0, y1, wy);
    for (std::size_t x = 0; x < target; ++x) {
      std::size_t x0, x1;
      double wx;
      source(x, x0, x1, wx);
      const double top = (1 - wx) * image[y0 * side + x0] + wx * image[y0 * side + x1];
      const double bottom = (1 - wx) * image[y1 * side + x0] + wx * image[y1 * side + x1];
      out[y * target + x] = (1 - wy) * top + wy * bottom;
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& image) {
  const std::size_t side = square_side(image);
  Tensor out({side * side});
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) out[y * side + x] = image[y * side + (side - 1 - x)];
  return out;
}

Tensor rotate(const Tensor& image, double degrees) {
  const std::size_t side = square_side(image);
  if (degrees == 0.0) return Tensor({side * side}, image.values());
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double centre = (static_cast<double>(side) - 1.0) / 2.0;
  Tensor out({side * side});
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double dx = static_cast<double>(x) - centre, dy = static_cast<double>(y) - centre;
      // inverse map: rotate the output coordinate back by -theta
      const double sx = c * dx + s * dy + centre;
      const double sy = -s * dx + c * dy + centre;
      out[y * side + x] = std::clamp(sample_zero_fill(image, side, sx, sy), 0.0, 1.0);
    }
  return out;
}

Tensor rescale(const Tensor& image, double factor) {
  const std::size_t side = square_side(image);
  if (!(factor > 0.0)) throw std::invalid_argument("scale factor must be positive");
  const auto scaled_side =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(side) * factor)));
  if (scaled_side == side) return Tensor({side * side}, image.values());
  const Tensor scaled = resize(image, scaled_side);
  Tensor out({side * side});
  if (scaled_side > side) {
    const std::size_t off = (scaled_side - side) / 2;
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) out[y * side + x] = scaled[(y + off) * scaled_side + x + off];
  } else {
    const std::size_t off = (side - scaled_side) / 2;
    for (std::size_t y = 0; y < scaled_side; ++y)
      for (std::size_t x = 0; x < scaled_side; ++x) out[(y + off) * side + x + off] = scaled[y * scaled_side + x];
  }
  return out;
}

AugmentDraw draw_augmentation(const AugmentConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentDraw d;
  // Every value is drawn regardless of outcome so the stream stays aligned.
  d.flip = unit(rng) < config.p_flip;
  d.rotate = unit(rng) < config.p_rotate;
  d.angle_deg = (2.0 * unit(rng) - 1.0) * config.max_rotation_deg;
  d.scale = unit(rng) < config.p_scale;
  d.factor = config.scale_min + (config.scale_max - config.scale_min) * unit(rng);
  return d;
}

Tensor apply_augmentation(const Tensor& image, const AugmentDraw& draw) {
  Tensor out = image;
  if (draw.flip) out = flip_horizontal(out);
  if (draw.rotate) out = rotate(out, draw.angle_deg);
  if (draw.scale) out = rescale(out, draw.factor);
  return out;
}

Sample augment(const Sample& sample, const AugmentConfig& config, std::mt19937_64& rng) {
  const AugmentDraw d = draw_augmentation(config, rng);
  Sample out = sample;
  out.image_t = apply_augmentation(sample.image_t, d);
  out.image_l = apply_augmentation(sample.image_l, d);
  return out;
}

TrainingExample to_training_example(const Sample& sample) {
  TrainingExample ex;
  ex.patient_id = sample.patient_id;
  ex.image_t = sample.image_t;
  ex.image_l = sample.image_l;
  ex.label = sample.label == 1 ? std::array<double, 2>{0.0, 1.0} : std::array<double, 2>{1.0, 0.0};
  return ex;
}

std::vector<TrainingExample> mixup_with(const std::vector<TrainingExample>& batch, double lambda,
                                        const std::vector<std::size_t>& partner) {
  if (partner.size() != batch.size()) throw std::invalid_argument("mixup partner list has the wrong length");
  if (lambda == 1.0) return batch;
  std::vector<TrainingExample> out = batch;
  const double mu = 1.0 - lambda;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainingExample& other = batch.at(partner[i]);
    auto blend = [&](Tensor& dst, const Tensor& a, const Tensor& b) {
      for (std::size_t p = 0; p < dst.size(); ++p) dst[p] = lambda * a[p] + mu * b[p];
    };
    blend(out[i].image_t, batch[i].image_t, other.image_t);
    blend(out[i].image_l, batch[i].image_l, other.image_l);
    for (std::size_t c = 0; c < 2; ++c) out[i].label[c] = lambda * batch[i].label[c] + mu * other.label[c];
  }
  return out;
}

double sample_beta(double alpha, double beta, std::mt19937_64& rng) {
  std::gamma_distribution<double> ga(alpha, 1.0), gb(beta, 1.0);
  const double x = ga(rng), y = gb(rng);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

std::vector<TrainingExample> mixup(const std::vector<TrainingExample>& batch, double alpha, std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("mixup alpha must be positive");
  if (batch.size() <= 1) return batch;
  const double lambda = sample_beta(alpha, alpha, rng);
  std::vector<std::size_t> partner(batch.size());
  std::iota(partner.begin(), partner.end(), std::size_t{0});
  std::shuffle(partner.begin(), partner.end(), rng);
  return mixup_with(batch, lambda, partner);
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kDatasetMagic = "MVUS";
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(dataset.size()));
  w.u16(static_cast<std::uint16_t>(dataset.side));
  const std::size_t pixels = dataset.side * dataset.side;
  for (const Sample& s : dataset.samples) {
    if (s.image_t.size() != pixels || s.image_l.size() != pixels)
      throw ShapeError("sample images do not match the dataset side");
    w.u32(s.patient_id);
    w.u8(static_cast<std::uint8_t>(s.label));
    w.f64(s.rho);
    for (double v : s.image_t.data()) w.f64(v);
    for (double v : s.image_l.data()) w.f64(v);
  }
  write_file(path, w.buffer());
}

Dataset load_dataset(const std::string& path) {
  ByteReader r(read_file(path));
  if (r.remaining() < 4 || r.bytes(4) != kDatasetMagic)
    throw FormatError("'" + path + "' is not a dataset file (bad magic)");
  if (const auto v = r.u16(); v != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(v));
  const std::uint32_t count = r.u32();
  Dataset ds;
  ds.side = r.u16();
  if (ds.side == 0) throw FormatError("dataset image side is zero");
  const std::size_t pixels = ds.side * ds.side;
  ds.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample s;
    s.patient_id = r.u32();
    s.label = r.u8();
    if (s.label > 1) throw FormatError("label out of range in dataset");
    s.rho = r.f64();
    std::vector<double> t(pixels), l(pixels);
    for (double& v : t) v = r.f64();
    for (double& v : l) v = r.f64();
    s.image_t = Tensor({pixels}, std::move(t));
    s.image_l = Tensor({pixels}, std::move(l));
    ds.samples.push_back(std::move(s));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after dataset samples");
  return ds;
}

std::string manifest_text(const GenConfig& c, const Dataset& dataset) {
  std::size_t malignant = 0;
  for (const auto& s : dataset.samples) malignant += static_cast<std::size_t>(s.label);
  std::ostringstream os;
  os << std::setprecision(17);
  os << "format=MVUS\n"
     << "format_version=" << kDatasetVersion << "\n"
     << "n_patients=" << c.n_patients << "\n"
     << "image_side=" << c.image_side << "\n"
     << "balance=" << c.balance << "\n"
     << "amplitude=" << c.amplitude << "\n"
     << "noise_std=" << c.noise_std << "\n"
     << "rho_min=" << c.rho_min << "\n"
     << "rho_max=" << c.rho_max << "\n"
     << "gen_seed=" << c.seed << "\n"
     << "malignant_count=" << malignant << "\n";
  return os.str();
}

}  // namespace mvpd
