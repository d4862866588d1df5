#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpnn/model.hpp"
#include "mpnn/noise_aware.hpp"
#include "mpnn/rng.hpp"

using namespace mpnn;

namespace {

const double kLn3 = std::log(3.0);

ProbMap random_probs(rng::Prng& prng, int h, int w) {
  ProbMap p({3, h, w});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (std::int64_t i = 0; i < hw; ++i) {
    double v[3], sum = 0.0;
    for (double& x : v) {
      x = -std::log(prng.uniform() + 1e-12);
      sum += x;
    }
    for (int c = 0; c < 3; ++c) p[c * hw + i] = v[c] / sum;
  }
  return p;
}

PixelPartition random_partition(rng::Prng& prng, int h, int w) {
  PixelPartition part(h, w);
  for (auto& c : part.clean) c = prng.uniform() < 0.5 ? 1 : 0;
  part.recount();
  return part;
}

LabelMask random_labels(rng::Prng& prng, int h, int w) {
  LabelMask m(h, w);
  for (auto& v : m.v) v = static_cast<std::uint8_t>(prng.uniform_int(0, 2));
  return m;
}

noise::NoiseAwareConfig cfg_with(std::int64_t t_max, double w_max = 0.1,
                                 double h0 = 0.75) {
  noise::NoiseAwareConfig cfg;
  cfg.t_max = t_max;
  cfg.w_max = w_max;
  cfg.h0_frac = h0;
  return cfg;
}

}  // namespace

TEST_CASE("perturb with sigma 0 copies the input; deterministic in seed") {
  Tensor img({3, 8, 8});
  rng::Prng prng(4);
  for (std::int64_t i = 0; i < img.size(); ++i) img[i] = prng.gaussian();

  const auto zero = noise::perturb(img, 3, 0.0, 42);
  for (const auto& t : zero) CHECK(t.equals(img));

  const auto a = noise::perturb(img, 4, 0.05, 42);
  const auto b = noise::perturb(img, 4, 0.05, 42);
  for (int m = 0; m < 4; ++m) CHECK(a[m].equals(b[m]));
  const auto c = noise::perturb(img, 4, 0.05, 43);
  CHECK_FALSE(c[0].equals(a[0]));
}

TEST_CASE("perturb noise has the requested scale") {
  Tensor img({3, 64, 64});
  const double sigma = 0.05;
  const auto ts = noise::perturb(img, 8, sigma, 7);
  double sumsq = 0.0;
  std::int64_t n = 0;
  for (const auto& t : ts) {
    for (std::int64_t i = 0; i < t.size(); ++i) sumsq += t[i] * t[i];
    n += t.size();
  }
  const double sd = std::sqrt(sumsq / static_cast<double>(n));
  CHECK(sd == doctest::Approx(sigma).epsilon(0.05));
}

TEST_CASE("teacher_mean identity, one-hot average and oracle") {
  rng::Prng prng(5);
  const ProbMap p = random_probs(prng, 6, 6);
  CHECK(noise::teacher_mean({p}).equals(p));

  ProbMap one({3, 1, 1}), two({3, 1, 1});
  one[1] = 1.0;
  two[2] = 1.0;
  const ProbMap mean = noise::teacher_mean({one, two});
  CHECK(mean[0] == 0.0);
  CHECK(mean[1] == 0.5);
  CHECK(mean[2] == 0.5);

  std::vector<ProbMap> stack;
  for (int m = 0; m < 5; ++m) stack.push_back(random_probs(prng, 4, 4));
  const ProbMap got = noise::teacher_mean(stack);
  for (std::int64_t i = 0; i < got.size(); ++i) {
    double s = 0.0;
    for (const auto& q : stack) s += q[i];
    CHECK(got[i] == doctest::Approx(s / 5.0).epsilon(1e-14));
  }
  // simplex preserved
  const std::int64_t hw = 16;
  for (std::int64_t i = 0; i < hw; ++i) {
    CHECK(got[i] + got[hw + i] + got[2 * hw + i] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("entropy of one-hot, uniform and a hand-computed pixel") {
  ProbMap onehot({3, 1, 1});
  onehot[0] = 1.0;
  CHECK(noise::entropy_map({onehot})[0] == 0.0);

  ProbMap uniform({3, 1, 1});
  uniform[0] = uniform[1] = uniform[2] = 1.0 / 3.0;
  CHECK(std::abs(noise::entropy_map({uniform})[0] - kLn3) < 1e-12);

  ProbMap p({3, 1, 1});
  p[0] = 0.7;
  p[1] = 0.2;
  p[2] = 0.1;
  const double expected = -(0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1));
  const double got = noise::entropy_map({p})[0];
  CHECK(std::abs(got - expected) < 1e-15);
  CHECK(std::abs(got - 0.8018) < 1e-4);
}

TEST_CASE("entropy stays in [0, ln3] and vanishes only for one-hot pixels") {
  rng::Prng prng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ProbMap> stack;
    for (int m = 0; m < 3; ++m) stack.push_back(random_probs(prng, 8, 8));
    const Tensor u = noise::entropy_map(stack);
    const ProbMap mean = noise::teacher_mean(stack);
    const std::int64_t hw = 64;
    for (std::int64_t i = 0; i < hw; ++i) {
      CHECK(u[i] >= -1e-12);
      CHECK(u[i] <= kLn3 + 1e-12);
      double mx = std::max({mean[i], mean[hw + i], mean[2 * hw + i]});
      if (u[i] < 1e-9) CHECK(mx > 1.0 - 1e-6);
    }
  }
}

TEST_CASE("lambda schedule hits its analytic values") {
  const auto cfg = cfg_with(1000);
  CHECK(noise::lambda_schedule(0, cfg) ==
        doctest::Approx(0.1 * std::exp(-5.0)).epsilon(1e-12));
  CHECK(noise::lambda_schedule(500, cfg) ==
        doctest::Approx(0.1 * std::exp(-1.25)).epsilon(1e-12));
  CHECK(noise::lambda_schedule(1000, cfg) == doctest::Approx(0.1).epsilon(1e-15));
  // strictly increasing, bounded by w_max
  double prev = -1.0;
  for (std::int64_t t = 0; t <= 1000; t += 100) {
    const double v = noise::lambda_schedule(t, cfg);
    CHECK(v > prev);
    CHECK(v <= 0.1 + 1e-15);
    prev = v;
  }
}

TEST_CASE("uncertainty gate ramps from 0.75 ln3 territory to ln3") {
  const auto cfg = cfg_with(400);
  const double h0 = noise::threshold_schedule(0, cfg);
  CHECK(h0 == doctest::Approx((0.75 + 0.25 * std::exp(-5.0)) * kLn3).epsilon(1e-12));
  CHECK(std::abs(h0 - 0.8259) < 2e-4);
  CHECK(std::abs(noise::threshold_schedule(400, cfg) - kLn3) < 1e-12);
  double prev = 0.0;
  for (std::int64_t t = 0; t <= 400; t += 100) {
    const double v = noise::threshold_schedule(t, cfg);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("clean loss on perfect, uniform and single-pixel cases") {
  // perfect prediction at every clean pixel -> 0
  LabelMask y(2, 2);
  y.at(0, 0) = 0;
  y.at(0, 1) = 1;
  y.at(1, 0) = 2;
  y.at(1, 1) = 1;
  ProbMap perfect({3, 2, 2});
  const std::int64_t hw = 4;
  for (std::int64_t i = 0; i < hw; ++i) perfect[y.v[std::size_t(i)] * hw + i] = 1.0;
  const PixelPartition all = PixelPartition::all_clean(2, 2);
  CHECK(noise::clean_loss(perfect, y, all) == 0.0);

  // uniform prediction -> ln 3 for any nonempty clean set
  ProbMap uni({3, 2, 2});
  for (std::int64_t i = 0; i < uni.size(); ++i) uni[i] = 1.0 / 3.0;
  rng::Prng prng(8);
  for (int trial = 0; trial < 10; ++trial) {
    PixelPartition part = random_partition(prng, 2, 2);
    if (part.s_cl == 0) continue;
    CHECK(noise::clean_loss(uni, y, part) == doctest::Approx(kLn3).epsilon(1e-12));
  }

  // single clean pixel with P(true class) = 0.5
  ProbMap p({3, 2, 2});
  for (std::int64_t i = 0; i < hw; ++i) {
    p[0 * hw + i] = 0.5;
    p[1 * hw + i] = 0.25;
    p[2 * hw + i] = 0.25;
  }
  PixelPartition single(2, 2);
  single.clean[0] = 1;
  single.recount();
  CHECK(noise::clean_loss(p, y, single) == doctest::Approx(-std::log(0.5)).epsilon(1e-12));

  // empty clean set -> 0 with the warning flag set
  PixelPartition none(2, 2);
  none.recount();
  bool empty = false;
  CHECK(noise::clean_loss(p, y, none, &empty) == 0.0);
  CHECK(empty);
}

TEST_CASE("noisy loss gate behavior and hand value") {
  rng::Prng prng(9);
  const ProbMap ps = random_probs(prng, 4, 4);
  const PixelPartition part = random_partition(prng, 4, 4);
  Tensor u({4, 4});

  // student equals teacher -> 0
  CHECK(noise::noisy_loss(ps, ps, u, 1.0, part) == 0.0);

  // every noisy pixel above the gate -> empty gate -> 0
  for (std::int64_t i = 0; i < u.size(); ++i) u[i] = 2.0;
  std::int64_t gate_count = -1;
  CHECK(noise::noisy_loss(ps, random_probs(prng, 4, 4), u, 1.0, part, &gate_count) == 0.0);
  CHECK(gate_count == 0);

  // one gated pixel with opposing one-hot vectors -> squared distance 2
  ProbMap a({3, 1, 1}), b({3, 1, 1});
  a[0] = 1.0;
  b[1] = 1.0;
  PixelPartition noisy1(1, 1);
  noisy1.recount();  // all pixels noisy
  Tensor u1({1, 1});
  u1[0] = 0.1;
  CHECK(noise::noisy_loss(a, b, u1, 0.5, noisy1) == doctest::Approx(2.0));
  // strict inequality: u == H is excluded
  u1[0] = 0.5;
  CHECK(noise::noisy_loss(a, b, u1, 0.5, noisy1) == 0.0);
}

TEST_CASE("gate membership shrinks monotonically with the threshold") {
  rng::Prng prng(10);
  const PixelPartition part = random_partition(prng, 8, 8);
  Tensor u({8, 8});
  for (std::int64_t i = 0; i < u.size(); ++i) u[i] = prng.uniform() * kLn3;
  auto gated = [&](double gate) {
    std::vector<int> set;
    for (std::int64_t i = 0; i < u.size(); ++i) {
      if (!part.clean[std::size_t(i)] && u[i] < gate) set.push_back(int(i));
    }
    return set;
  };
  const auto lo = gated(0.4), hi = gated(0.9);
  for (int i : lo) CHECK(std::find(hi.begin(), hi.end(), i) != hi.end());
  CHECK(lo.size() <= hi.size());
}

TEST_CASE("losses are local to their pixel sets (bit-identical under masking)") {
  rng::Prng prng(11);
  const LabelMask y = random_labels(prng, 4, 4);
  const PixelPartition part = random_partition(prng, 4, 4);
  ProbMap ps = random_probs(prng, 4, 4);
  const ProbMap pt = random_probs(prng, 4, 4);
  Tensor u({4, 4});
  for (std::int64_t i = 0; i < u.size(); ++i) u[i] = prng.uniform();

  const double l_cl = noise::clean_loss(ps, y, part);
  const double l_no = noise::noisy_loss(ps, pt, u, 0.8, part);

  // perturb student probabilities at noisy pixels only -> L_cl unchanged
  ProbMap ps_noisy = ps;
  const std::int64_t hw = 16;
  for (std::int64_t i = 0; i < hw; ++i) {
    if (!part.clean[std::size_t(i)]) {
      ps_noisy[i] = prng.uniform();
      ps_noisy[hw + i] = prng.uniform();
      ps_noisy[2 * hw + i] = prng.uniform();
    }
  }
  CHECK(noise::clean_loss(ps_noisy, y, part) == l_cl);

  // perturb student probabilities at clean pixels only -> L_no unchanged
  ProbMap ps_clean = ps;
  for (std::int64_t i = 0; i < hw; ++i) {
    if (part.clean[std::size_t(i)]) {
      ps_clean[i] = prng.uniform();
      ps_clean[hw + i] = prng.uniform();
      ps_clean[2 * hw + i] = prng.uniform();
    }
  }
  CHECK(noise::noisy_loss(ps_clean, pt, u, 0.8, part) == l_no);
}

namespace {

// central finite differences of loss(softmax(logits)) w.r.t. logits
template <class LossFn>
Tensor fd_grad(const Tensor& logits, LossFn&& loss, double h = 1e-5) {
  Tensor g(std::vector<int>(logits.shape()));
  Tensor z = logits;
  for (std::int64_t i = 0; i < z.size(); ++i) {
    const double keep = z[i];
    z[i] = keep + h;
    const double up = loss(net::softmax(z));
    z[i] = keep - h;
    const double dn = loss(net::softmax(z));
    z[i] = keep;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

double rel_err(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace

TEST_CASE("loss gradients match central finite differences") {
  rng::Prng prng(12);
  Tensor logits({3, 4, 4});
  for (std::int64_t i = 0; i < logits.size(); ++i) logits[i] = prng.gaussian();
  const LabelMask y = random_labels(prng, 4, 4);
  const PixelPartition part = random_partition(prng, 4, 4);
  const ProbMap pt = random_probs(prng, 4, 4);
  Tensor u({4, 4});
  for (std::int64_t i = 0; i < u.size(); ++i) u[i] = prng.uniform();
  const double gate = 0.8;

  const ProbMap ps = net::softmax(logits);

  const Tensor g_cl = noise::clean_loss_grad_logits(ps, y, part);
  const Tensor g_cl_fd = fd_grad(
      logits, [&](const ProbMap& p) { return noise::clean_loss(p, y, part); });
  CHECK(rel_err(g_cl, g_cl_fd) < 1e-4);

  const Tensor g_no = noise::noisy_loss_grad_logits(ps, pt, u, gate, part);
  const Tensor g_no_fd = fd_grad(
      logits, [&](const ProbMap& p) { return noise::noisy_loss(p, pt, u, gate, part); });
  CHECK(rel_err(g_no, g_no_fd) < 1e-4);
}

TEST_CASE("total loss combines the terms through the ramp") {
  const auto cfg = cfg_with(100);
  CHECK(noise::total_loss(0.7, 0.0, 50, cfg) == doctest::Approx(0.7));
  CHECK(noise::total_loss(0.0, 1.0, 100, cfg) == doctest::Approx(0.1));
  CHECK(noise::total_loss(0.5, 0.2, 100, cfg) == doctest::Approx(0.52));
  CHECK_THROWS_AS(
      noise::total_loss(std::numeric_limits<double>::quiet_NaN(), 0.0, 0, cfg),
      NumericError);
  CHECK_THROWS_AS(
      noise::total_loss(0.0, std::numeric_limits<double>::infinity(), 0, cfg),
      NumericError);
}
