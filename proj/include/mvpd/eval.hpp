#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvpd/data.hpp"
#include "mvpd/model.hpp"

namespace mvpd {

/// Malignant is the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// std::nullopt marks an undefined metric (zero denominator).
struct Metrics {
  std::optional<double> acc, sen, spe, pre, f1;
};

Metrics compute_metrics(const ConfusionMatrix& cm);

struct InspectionRecord {
  std::uint32_t patient_id = 0;
  std::optional<std::array<double, 2>> pred_t;  // absent for a single-view model without that head
  std::optional<std::array<double, 2>> pred_l;
  std::array<double, 2> fused{};
  double w_t = 0.5;
  double w_l = 0.5;
  int label = 0;
  std::optional<double> rho;
};

struct Evaluation {
  ConfusionMatrix cm;
  std::vector<InspectionRecord> records;
};

struct EvalOptions {
  double threshold = 0.5;  // on the fused malignant probability (>= counts as malignant)
  std::optional<Fusion> fusion;  // defaults to the model mode's fusion
  std::size_t batch_size = 64;
};

/// Resizes every image of `dataset` to `side` (no-op when equal).
Dataset resized(const Dataset& dataset, std::size_t side);

Evaluation evaluate_model(const Model& model, const Dataset& split, const EvalOptions& options = {});

/// Spearman rank correlation with average ranks for ties; nullopt when either
/// side has zero rank variance. Throws on fewer than 3 points.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);
/// Spearman correlation between learned w_t and the hidden rho.
std::optional<double> weight_correlation(std::span<const InspectionRecord> records);

struct ReportRow {
  Mode mode = Mode::Full;
  std::optional<Metrics> metrics;  // empty when the run failed
  std::string failure;
};

struct Report {
  std::string markdown;
  std::string csv;
};

/// Percent with two decimals, half away from zero; "undefined" for nullopt.
std::string format_percent(std::optional<double> fraction);

/// Method | ACC | SEN | SPE | PRE | F1 table plus its CSV twin, rows in the
/// canonical mode order.
Report emit_report(std::vector<ReportRow> rows);

/// id, pred_t_malignant, pred_l_malignant, fused_malignant, w_t, w_l, label, rho
std::string inspections_csv(std::span<const InspectionRecord> records);
std::string inspection_csv_row(const InspectionRecord& record);

}  // namespace mvpd
