#include "mpnn/evaluate.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mpnn::metrics {

namespace {

struct Counts {
  std::int64_t inter = 0, pred = 0, gt = 0;
};

Counts count_class(const LabelMask& pred, const LabelMask& gt, int class_id) {
  MPNN_CHECK(pred.same_shape(gt), "metrics: mask shape mismatch ", pred.h, "x", pred.w,
             " vs ", gt.h, "x", gt.w);
  Counts c;
  const std::size_t n = pred.v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool a = pred.v[i] == class_id;
    const bool b = gt.v[i] == class_id;
    c.pred += a;
    c.gt += b;
    c.inter += a && b;
  }
  return c;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double iou(const LabelMask& pred, const LabelMask& gt, int class_id) {
  MPNN_CHECK(class_id == 1 || class_id == 2, "iou: class_id must be 1 or 2, got ",
             class_id);
  const Counts c = count_class(pred, gt, class_id);
  const std::int64_t uni = c.pred + c.gt - c.inter;
  if (uni == 0) return 1.0;  // class absent from both masks
  return static_cast<double>(c.inter) / static_cast<double>(uni);
}

double dice(const LabelMask& pred, const LabelMask& gt, int class_id) {
  MPNN_CHECK(class_id == 1 || class_id == 2, "dice: class_id must be 1 or 2, got ",
             class_id);
  const Counts c = count_class(pred, gt, class_id);
  if (c.pred + c.gt == 0) return 1.0;
  return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.gt);
}

double dsc_m(const LabelMask& pred, const LabelMask& gt) {
  return 0.5 * (dice(pred, gt, 1) + dice(pred, gt, 2));
}

void MetricsReport::recompute_means() {
  iou_disc = iou_cup = dice_disc = dice_cup = 0.0;
  if (per_sample.empty()) return;
  for (const auto& s : per_sample) {
    iou_disc += s.iou_disc;
    iou_cup += s.iou_cup;
    dice_disc += s.dice_disc;
    dice_cup += s.dice_cup;
  }
  const double inv = 1.0 / static_cast<double>(per_sample.size());
  iou_disc *= inv;
  iou_cup *= inv;
  dice_disc *= inv;
  dice_cup *= inv;
}

MetricsReport evaluate_model(const net::Network& network, const net::ParamSet& params,
                             const Dataset& dataset, const std::string& method,
                             const std::string& target) {
  MetricsReport report;
  report.method = method;
  report.target = target;
  report.per_sample.reserve(dataset.size());
  for (const auto& s : dataset.samples) {
    const LabelMask pred = network.predict_mask(params, s.image);
    SampleMetrics m;
    m.id = s.id;
    m.iou_disc = 100.0 * iou(pred, s.label, 1);
    m.iou_cup = 100.0 * iou(pred, s.label, 2);
    m.dice_disc = 100.0 * dice(pred, s.label, 1);
    m.dice_cup = 100.0 * dice(pred, s.label, 2);
    report.per_sample.push_back(std::move(m));
  }
  report.recompute_means();
  return report;
}

void emit_report(const std::vector<MetricsReport>& reports,
                 const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  MPNN_CHECK(out.good(), "cannot write report ", path.string());
  out << "method,target,iou_disc,iou_cup,dice_disc,dice_cup\n";
  for (const auto& r : reports) {
    out << r.method << ',' << r.target << ',' << fmt_double(r.iou_disc) << ','
        << fmt_double(r.iou_cup) << ',' << fmt_double(r.dice_disc) << ','
        << fmt_double(r.dice_cup) << '\n';
  }
  MPNN_CHECK(out.good(), "report write failed: ", path.string());
  out.close();

  // human-readable rendering alongside
  std::filesystem::path txt = path;
  txt.replace_extension(".txt");
  std::ofstream pretty(txt, std::ios::trunc);
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %-14s %9s %9s %10s %10s\n", "method",
                "target", "IoU_disc", "IoU_cup", "Dice_disc", "Dice_cup");
  pretty << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%-24s %-14s %9.2f %9.2f %10.2f %10.2f\n",
                  r.method.c_str(), r.target.c_str(), r.iou_disc, r.iou_cup,
                  r.dice_disc, r.dice_cup);
    pretty << line;
  }
}

std::vector<ReportRow> parse_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  MPNN_CHECK(in.good(), "cannot open report ", path.string());
  std::string line;
  MPNN_CHECK(static_cast<bool>(std::getline(in, line)), "empty report file ",
             path.string());
  MPNN_CHECK(line == "method,target,iou_disc,iou_cup,dice_disc,dice_cup",
             path.string(), ": unexpected header '", line, "'");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ReportRow r;
    std::string field;
    std::getline(ls, r.method, ',');
    std::getline(ls, r.target, ',');
    auto next_double = [&]() {
      MPNN_CHECK(static_cast<bool>(std::getline(ls, field, ',')), path.string(),
                 ": short row '", line, "'");
      return std::stod(field);
    };
    r.iou_disc = next_double();
    r.iou_cup = next_double();
    r.dice_disc = next_double();
    r.dice_cup = next_double();
    rows.push_back(std::move(r));
  }
  return rows;
}

void emit_per_sample(const MetricsReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  MPNN_CHECK(out.good(), "cannot write per-sample report ", path.string());
  out << "id,iou_disc,iou_cup,dice_disc,dice_cup\n";
  for (const auto& s : report.per_sample) {
    out << s.id << ',' << fmt_double(s.iou_disc) << ',' << fmt_double(s.iou_cup) << ','
        << fmt_double(s.dice_disc) << ',' << fmt_double(s.dice_cup) << '\n';
  }
}

}  // namespace mpnn::metrics
