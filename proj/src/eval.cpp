#include "mvpd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace mvpd {

Metrics compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("confusion matrix is empty");
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  Metrics m;
  m.acc = ratio(cm.tp + cm.tn, cm.total());
  m.sen = ratio(cm.tp, cm.tp + cm.fn);
  m.spe = ratio(cm.tn, cm.tn + cm.fp);
  m.pre = ratio(cm.tp, cm.tp + cm.fp);
  if (m.pre && m.sen && (*m.pre + *m.sen) > 0.0) m.f1 = 2.0 * *m.pre * *m.sen / (*m.pre + *m.sen);
  return m;
}

Dataset resized(const Dataset& dataset, std::size_t side) {
  if (dataset.side == side) return dataset;
  Dataset out;
  out.side = side;
  out.samples.reserve(dataset.size());
  for (const Sample& s : dataset.samples) {
    Sample r = s;
    r.image_t = resize(s.image_t, side);
    r.image_l = resize(s.image_l, side);
    out.samples.push_back(std::move(r));
  }
  return out;
}

namespace {

std::array<double, 2> row_of(const Tensor& t, std::size_t r) { return {t.at(r, 0), t.at(r, 1)}; }

}  // namespace

Evaluation evaluate_model(const Model& model, const Dataset& split, const EvalOptions& options) {
  if (split.samples.empty()) throw std::invalid_argument("cannot evaluate on an empty split");
  const std::size_t side = model.config.image_side;
  const std::size_t pixels = side * side;
  const Dataset data = resized(split, side);
  ForwardOptions fwd;
  fwd.fusion = options.fusion.value_or(default_fusion(model.mode));

  Evaluation ev;
  ev.records.reserve(data.size());
  const std::size_t step = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t start = 0; start < data.size(); start += step) {
    const std::size_t n = std::min(step, data.size() - start);
    Tensor it({n, pixels}), il({n, pixels});
    for (std::size_t i = 0; i < n; ++i) {
      const Sample& s = data.samples[start + i];
      std::copy(s.image_t.data().begin(), s.image_t.data().end(), it.data().begin() + static_cast<std::ptrdiff_t>(i * pixels));
      std::copy(s.image_l.data().begin(), s.image_l.data().end(), il.data().begin() + static_cast<std::ptrdiff_t>(i * pixels));
    }
    const BatchGraph bg = build_forward(model, it, il, fwd);
    const Graph& g = bg.graph;
    const Tensor& fused = g.value(bg.fused);
    const Tensor& weights = g.value(bg.weights);
    for (std::size_t i = 0; i < n; ++i) {
      const Sample& s = data.samples[start + i];
      InspectionRecord rec;
      rec.patient_id = s.patient_id;
      if (bg.pred_t) rec.pred_t = row_of(g.value(*bg.pred_t), i);
      if (bg.pred_l) rec.pred_l = row_of(g.value(*bg.pred_l), i);
      rec.fused = row_of(fused, i);
      rec.w_t = weights.at(i, 0);
      rec.w_l = weights.at(i, 1);
      rec.label = s.label;
      rec.rho = s.rho;
      const bool positive = rec.fused[1] >= options.threshold;
      if (positive) (s.label == 1 ? ev.cm.tp : ev.cm.fp)++;
      else (s.label == 1 ? ev.cm.fn : ev.cm.tn)++;
      ev.records.push_back(rec);
    }
  }
  return ev;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("spearman needs at least 3 points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::optional<double> weight_correlation(std::span<const InspectionRecord> records) {
  if (records.size() < 3) throw std::invalid_argument("weight correlation needs at least 3 records");
  std::vector<double> w, rho;
  for (const auto& r : records) {
    if (!r.rho) throw std::invalid_argument("record " + std::to_string(r.patient_id) + " carries no rho");
    w.push_back(r.w_t);
    rho.push_back(*r.rho);
  }
  return spearman(w, rho);
}

// ---------------------------------------------------------------------------

std::string format_percent(std::optional<double> fraction) {
  if (!fraction) return "undefined";
  const double hundredths = std::round(*fraction * 10000.0);  // std::round is half away from zero
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", hundredths / 100.0);
  return buf;
}

Report emit_report(std::vector<ReportRow> rows) {
  auto rank = [](Mode m) { return std::find(kAllModes.begin(), kAllModes.end(), m) - kAllModes.begin(); };
  std::stable_sort(rows.begin(), rows.end(), [&](const ReportRow& a, const ReportRow& b) { return rank(a.mode) < rank(b.mode); });

  Report report;
  report.markdown = "| Method | ACC | SEN | SPE | PRE | F1 |\n|---|---|---|---|---|---|\n";
  report.csv = "method,acc,sen,spe,pre,f1\n";
  for (const auto& row : rows) {
    const std::string name(mode_name(row.mode));
    if (!row.metrics) {
      const std::string why = row.failure.empty() ? "failed" : "FAILED: " + row.failure;
      report.markdown += "| " + name + " | " + why + " | | | | |\n";
      report.csv += name + ",failed,,,,\n";
      continue;
    }
    const Metrics& m = *row.metrics;
    const std::array<std::string, 5> cells = {format_percent(m.acc), format_percent(m.sen), format_percent(m.spe),
                                              format_percent(m.pre), format_percent(m.f1)};
    report.markdown += "| " + name;
    report.csv += name;
    for (const auto& c : cells) {
      report.markdown += " | " + c;
      report.csv += "," + c;
    }
    report.markdown += " |\n";
    report.csv += "\n";
  }
  return report;
}

std::string inspection_csv_row(const InspectionRecord& r) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return std::string(buf);
  };
  std::string line = std::to_string(r.patient_id);
  line += "," + (r.pred_t ? num((*r.pred_t)[1]) : std::string());
  line += "," + (r.pred_l ? num((*r.pred_l)[1]) : std::string());
  line += "," + num(r.fused[1]);
  line += "," + num(r.w_t);
  line += "," + num(r.w_l);
  line += "," + std::to_string(r.label);
  line += "," + (r.rho ? num(*r.rho) : std::string());
  return line;
}

std::string inspections_csv(std::span<const InspectionRecord> records) {
  std::string out = "id,pred_t_malignant,pred_l_malignant,fused_malignant,w_t,w_l,label,rho\n";
  for (const auto& r : records) out += inspection_csv_row(r) + "\n";
  return out;
}

}  // namespace mvpd
