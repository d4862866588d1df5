#include <doctest.h>

#include <filesystem>

#include "mpnn/datasets.hpp"
#include "mpnn/evaluate.hpp"
#include "mpnn/rng.hpp"

using namespace mpnn;
namespace fs = std::filesystem;

namespace {

LabelMask random_mask(rng::Prng& prng, int h, int w) {
  LabelMask m(h, w);
  for (auto& v : m.v) v = static_cast<std::uint8_t>(prng.uniform_int(0, 2));
  return m;
}

// independent set-counting oracle
void oracle_counts(const LabelMask& a, const LabelMask& b, int cls, std::int64_t& inter,
                   std::int64_t& uni, std::int64_t& sum) {
  inter = uni = sum = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const bool x = a.v[i] == cls, y = b.v[i] == cls;
    inter += (x && y);
    uni += (x || y);
    sum += x + y;
  }
}

}  // namespace

TEST_CASE("iou and dice on identical, disjoint and overlapping masks") {
  LabelMask a(4, 4), b(4, 4);
  // 2x2 disc blocks overlapping in 2 pixels
  a.at(0, 0) = a.at(0, 1) = a.at(1, 0) = a.at(1, 1) = 1;
  b.at(1, 0) = b.at(1, 1) = b.at(2, 0) = b.at(2, 1) = 1;
  CHECK(metrics::iou(a, a, 1) == doctest::Approx(1.0));
  CHECK(metrics::dice(a, a, 1) == doctest::Approx(1.0));
  CHECK(metrics::iou(a, b, 1) == doctest::Approx(2.0 / 6.0));
  CHECK(metrics::dice(a, b, 1) == doctest::Approx(0.5));

  LabelMask c(4, 4);
  c.at(3, 3) = 1;
  LabelMask d(4, 4);
  d.at(0, 0) = 1;
  CHECK(metrics::iou(c, d, 1) == doctest::Approx(0.0));
  CHECK(metrics::dice(c, d, 1) == doctest::Approx(0.0));
}

TEST_CASE("empty-vs-empty class scores 1.0") {
  LabelMask a(4, 4), b(4, 4);
  CHECK(metrics::iou(a, b, 2) == 1.0);
  CHECK(metrics::dice(a, b, 2) == 1.0);
}

TEST_CASE("metrics match the counting oracle and satisfy dice = 2iou/(1+iou)") {
  rng::Prng prng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const LabelMask a = random_mask(prng, 16, 16);
    const LabelMask b = random_mask(prng, 16, 16);
    for (int cls = 1; cls <= 2; ++cls) {
      std::int64_t inter, uni, sum;
      oracle_counts(a, b, cls, inter, uni, sum);
      const double i = metrics::iou(a, b, cls);
      const double d = metrics::dice(a, b, cls);
      if (uni == 0) {
        CHECK(i == 1.0);
        CHECK(d == 1.0);
      } else {
        CHECK(i == doctest::Approx(double(inter) / double(uni)).epsilon(1e-14));
        CHECK(d == doctest::Approx(2.0 * double(inter) / double(sum)).epsilon(1e-14));
      }
      CHECK(std::abs(d - 2.0 * i / (1.0 + i)) < 1e-12);
      CHECK(i <= d + 1e-15);
      CHECK(i >= 0.0);
      CHECK(d <= 1.0);
    }
  }
}

TEST_CASE("metrics are symmetric under identical relabeling of both masks") {
  rng::Prng prng(123);
  const LabelMask a = random_mask(prng, 12, 12);
  const LabelMask b = random_mask(prng, 12, 12);
  // swap classes 1 and 2 in both masks
  auto swap12 = [](LabelMask m) {
    for (auto& v : m.v) {
      if (v == 1)
        v = 2;
      else if (v == 2)
        v = 1;
    }
    return m;
  };
  const LabelMask a2 = swap12(a), b2 = swap12(b);
  CHECK(metrics::iou(a, b, 1) == metrics::iou(a2, b2, 2));
  CHECK(metrics::dice(a, b, 2) == metrics::dice(a2, b2, 1));
}

namespace {

// constant-background stub: zeroed weights with a large background head bias
net::ParamSet constant_background_params(const net::ArchConfig& arch) {
  net::ParamSet ps = net::init_network(arch, 0);
  for (auto& [name, t] : ps.tensors) {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = 0.0;
  }
  ps.tensors.at("head.b")[0] = 10.0;
  return ps;
}

}  // namespace

TEST_CASE("evaluate_model on a perfect and a constant-background model") {
  const net::ArchConfig arch = net::ArchConfig::preset("tiny");
  const net::Network network(arch);
  const net::ParamSet params = net::init_network(arch, 3);

  // build a tiny dataset whose ground truth is this model's own prediction:
  // metrics must then be exactly 100
  const auto pair = data::synth_generate(8, {4, 32, 0.2});
  const data::ChannelStats stats = data::compute_channel_stats(pair.noisy, 32);
  Dataset ds = data::preprocess_dataset(pair.noisy, 32, stats);
  for (auto& s : ds.samples) s.label = network.predict_mask(params, s.image);

  const auto perfect = metrics::evaluate_model(network, params, ds, "oracle", "clean");
  CHECK(perfect.iou_disc == doctest::Approx(100.0));
  CHECK(perfect.iou_cup == doctest::Approx(100.0));
  CHECK(perfect.dice_disc == doctest::Approx(100.0));
  CHECK(perfect.dice_cup == doctest::Approx(100.0));

  // constant background vs masks that do contain disc and cup
  Dataset real = data::preprocess_dataset(pair.clean, 32, stats);
  const auto zero = metrics::evaluate_model(network, constant_background_params(arch),
                                            real, "bg", "clean");
  CHECK(zero.iou_disc == doctest::Approx(0.0));
  CHECK(zero.iou_cup == doctest::Approx(0.0));
  CHECK(zero.dice_disc == doctest::Approx(0.0));
  CHECK(zero.dice_cup == doctest::Approx(0.0));

  // aggregate equals the mean of the per-sample breakdown
  double mean = 0.0;
  for (const auto& s : perfect.per_sample) mean += s.dice_cup;
  mean /= static_cast<double>(perfect.per_sample.size());
  CHECK(perfect.dice_cup == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("report emit/parse round-trip") {
  const fs::path path = fs::temp_directory_path() / "mpnn_test_report.csv";
  metrics::MetricsReport r1, r2;
  r1.method = "baseline";
  r1.target = "rater1";
  r1.iou_disc = 83.857142857142861;
  r1.iou_cup = 75.77;
  r1.dice_disc = 91.03;
  r1.dice_cup = 85.64;
  r2.method = "mpnn";
  r2.target = "majority-vote";
  r2.iou_disc = 85.22;
  r2.iou_cup = 78.11;
  r2.dice_disc = 91.83;
  r2.dice_cup = 87.25;

  metrics::emit_report({r1, r2}, path);
  const auto rows = metrics::parse_report(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "baseline");
  CHECK(rows[0].target == "rater1");
  CHECK(rows[0].iou_disc == r1.iou_disc);  // exact round-trip
  CHECK(rows[1].method == "mpnn");
  CHECK(rows[1].dice_cup == r2.dice_cup);

  metrics::emit_report({}, path);
  CHECK(metrics::parse_report(path).empty());
  fs::remove(path);
}
