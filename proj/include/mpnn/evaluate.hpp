#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mpnn/model.hpp"
#include "mpnn/types.hpp"

namespace mpnn::metrics {

// Intersection-over-union of one class's binary masks. Both masks empty for
// the class counts as a perfect prediction (1.0).
double iou(const LabelMask& pred, const LabelMask& gt, int class_id);

// Dice coefficient 2|A∩B| / (|A|+|B|), same empty-vs-empty convention.
double dice(const LabelMask& pred, const LabelMask& gt, int class_id);

// (Dice_disc + Dice_cup) / 2, background excluded.
double dsc_m(const LabelMask& pred, const LabelMask& gt);

struct SampleMetrics {
  std::string id;
  double iou_disc = 0, iou_cup = 0, dice_disc = 0, dice_cup = 0;  // percentages
};

struct MetricsReport {
  std::string method;
  std::string target;  // rater1 | majority-vote | clean
  double iou_disc = 0, iou_cup = 0, dice_disc = 0, dice_cup = 0;  // mean percentages
  std::vector<SampleMetrics> per_sample;

  double dice_mean() const { return 0.5 * (dice_disc + dice_cup); }
  void recompute_means();
};

MetricsReport evaluate_model(const net::Network& network, const net::ParamSet& params,
                             const Dataset& dataset, const std::string& method,
                             const std::string& target);

// Aggregate rows only, as stored in report files.
struct ReportRow {
  std::string method;
  std::string target;
  double iou_disc = 0, iou_cup = 0, dice_disc = 0, dice_cup = 0;
  bool operator==(const ReportRow& o) const = default;
};

// CSV table (exact round-trip values) plus a human-readable .txt rendering
// next to it.
void emit_report(const std::vector<MetricsReport>& reports,
                 const std::filesystem::path& path);
std::vector<ReportRow> parse_report(const std::filesystem::path& path);

// Per-sample breakdown CSV for a single report.
void emit_per_sample(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace mpnn::metrics
