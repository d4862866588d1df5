#include "mpnn/noise_aware.hpp"

#include <cmath>

#include "mpnn/rng.hpp"

namespace mpnn::noise {

void NoiseAwareConfig::validate() const {
  MPNN_CHECK_AS(ConfigError, m >= 1, "noise_aware: M must be >= 1");
  MPNN_CHECK_AS(ConfigError, sigma >= 0.0, "noise_aware: sigma must be >= 0");
  MPNN_CHECK_AS(ConfigError, alpha >= 0.0 && alpha < 1.0,
                "noise_aware: alpha must be in [0,1)");
  MPNN_CHECK_AS(ConfigError, w_max >= 0.0, "noise_aware: w_max must be >= 0");
  MPNN_CHECK_AS(ConfigError, t_max > 0, "noise_aware: t_max must be > 0");
  MPNN_CHECK_AS(ConfigError, h0_frac > 0.0 && h0_frac <= 1.0,
                "noise_aware: H0 fraction must be in (0,1]");
}

std::vector<Tensor> perturb(const Tensor& image, int m, double sigma,
                            std::uint64_t seed) {
  MPNN_CHECK(m >= 1, "perturb: M must be >= 1");
  MPNN_CHECK(sigma >= 0.0, "perturb: sigma must be >= 0");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(m));
  rng::Prng prng(rng::mix(seed, 0xBEEFu));
  for (int i = 0; i < m; ++i) {
    Tensor t = image;
    if (sigma > 0.0) {
      double* p = t.data();
      for (std::int64_t j = 0; j < t.size(); ++j) p[j] += sigma * prng.gaussian();
    }
    out.push_back(std::move(t));
  }
  return out;
}

ProbMap teacher_mean(const std::vector<ProbMap>& stack) {
  MPNN_CHECK(!stack.empty(), "teacher_mean: empty stack");
  ProbMap mean(std::vector<int>(stack.front().shape()));
  for (const auto& p : stack) {
    MPNN_CHECK(p.same_shape(mean), "teacher_mean: shape mismatch in stack");
    const double* src = p.data();
    double* dst = mean.data();
    for (std::int64_t i = 0; i < mean.size(); ++i) dst[i] += src[i];
  }
  const double inv = 1.0 / static_cast<double>(stack.size());
  double* dst = mean.data();
  for (std::int64_t i = 0; i < mean.size(); ++i) dst[i] *= inv;
  return mean;
}

Tensor entropy_map(const std::vector<ProbMap>& stack) {
  const ProbMap mean = teacher_mean(stack);
  MPNN_CHECK(mean.rank() == 3, "entropy_map: expected {C,H,W} maps");
  const int c = mean.dim(0), h = mean.dim(1), w = mean.dim(2);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  Tensor u({h, w});
  const double* p = mean.data();
  double* out = u.data();
  for (std::int64_t i = 0; i < hw; ++i) {
    double ent = 0.0;
    for (int cc = 0; cc < c; ++cc) {
      const double q = p[cc * hw + i];
      if (q > 0.0) ent -= q * std::log(q);
    }
    out[i] = ent;
  }
  return u;
}

double ramp(std::int64_t t, std::int64_t t_max) {
  MPNN_CHECK(t_max > 0, "ramp: t_max must be > 0");
  MPNN_CHECK(t >= 0 && t <= t_max, "ramp: t=", t, " outside [0,", t_max, "]");
  const double frac = 1.0 - static_cast<double>(t) / static_cast<double>(t_max);
  return std::exp(-5.0 * frac * frac);
}

double lambda_schedule(std::int64_t t, const NoiseAwareConfig& cfg) {
  return cfg.w_max * ramp(t, cfg.t_max);
}

double threshold_schedule(std::int64_t t, const NoiseAwareConfig& cfg) {
  const double lnC = std::log(static_cast<double>(kNumClasses));
  return (cfg.h0_frac + (1.0 - cfg.h0_frac) * ramp(t, cfg.t_max)) * lnC;
}

namespace {

void check_loss_shapes(const ProbMap& probs, const PixelPartition& part) {
  MPNN_CHECK(probs.rank() == 3, "loss: expected {C,H,W} probabilities");
  MPNN_CHECK(probs.dim(1) == part.h && probs.dim(2) == part.w,
             "loss: probs ", probs.dim(1), "x", probs.dim(2), " vs partition ",
             part.h, "x", part.w);
}

constexpr double kLogFloor = 1e-300;  // -log never overflows for simplex values

}  // namespace

double clean_loss(const ProbMap& probs, const LabelMask& labels,
                  const PixelPartition& part, bool* empty) {
  check_loss_shapes(probs, part);
  MPNN_CHECK(labels.h == part.h && labels.w == part.w, "clean_loss: label shape mismatch");
  const std::int64_t hw = static_cast<std::int64_t>(part.h) * part.w;
  const double* p = probs.data();
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < hw; ++i) {
    if (!part.clean[static_cast<std::size_t>(i)]) continue;
    const int y = labels.v[static_cast<std::size_t>(i)];
    sum -= std::log(std::max(p[y * hw + i], kLogFloor));
    ++n;
  }
  if (empty) *empty = (n == 0);
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

Tensor clean_loss_grad_logits(const ProbMap& probs, const LabelMask& labels,
                              const PixelPartition& part) {
  check_loss_shapes(probs, part);
  const int c = probs.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(part.h) * part.w;
  Tensor grad(std::vector<int>(probs.shape()));
  if (part.s_cl == 0) return grad;
  const double inv = 1.0 / static_cast<double>(part.s_cl);
  const double* p = probs.data();
  double* g = grad.data();
  for (std::int64_t i = 0; i < hw; ++i) {
    if (!part.clean[static_cast<std::size_t>(i)]) continue;
    const int y = labels.v[static_cast<std::size_t>(i)];
    for (int cc = 0; cc < c; ++cc) {
      g[cc * hw + i] = (p[cc * hw + i] - (cc == y ? 1.0 : 0.0)) * inv;
    }
  }
  return grad;
}

double noisy_loss(const ProbMap& probs_s, const ProbMap& probs_t,
                  const Tensor& uncertainty, double gate,
                  const PixelPartition& part, std::int64_t* gate_count) {
  check_loss_shapes(probs_s, part);
  MPNN_CHECK(probs_s.same_shape(probs_t), "noisy_loss: student/teacher shape mismatch");
  MPNN_CHECK(uncertainty.rank() == 2 && uncertainty.dim(0) == part.h &&
                 uncertainty.dim(1) == part.w,
             "noisy_loss: uncertainty shape mismatch");
  const int c = probs_s.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(part.h) * part.w;
  const double* ps = probs_s.data();
  const double* pt = probs_t.data();
  const double* u = uncertainty.data();
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < hw; ++i) {
    if (part.clean[static_cast<std::size_t>(i)]) continue;
    if (!(u[i] < gate)) continue;  // strict inequality
    double d2 = 0.0;
    for (int cc = 0; cc < c; ++cc) {
      const double d = ps[cc * hw + i] - pt[cc * hw + i];
      d2 += d * d;
    }
    sum += d2;
    ++n;
  }
  if (gate_count) *gate_count = n;
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

Tensor noisy_loss_grad_logits(const ProbMap& probs_s, const ProbMap& probs_t,
                              const Tensor& uncertainty, double gate,
                              const PixelPartition& part) {
  check_loss_shapes(probs_s, part);
  const int c = probs_s.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(part.h) * part.w;

  std::int64_t n = 0;
  const double* u = uncertainty.data();
  for (std::int64_t i = 0; i < hw; ++i) {
    if (!part.clean[static_cast<std::size_t>(i)] && u[i] < gate) ++n;
  }
  Tensor grad(std::vector<int>(probs_s.shape()));
  if (n == 0) return grad;

  const double inv = 1.0 / static_cast<double>(n);
  const double* ps = probs_s.data();
  const double* pt = probs_t.data();
  double* g = grad.data();
  for (std::int64_t i = 0; i < hw; ++i) {
    if (part.clean[static_cast<std::size_t>(i)] || !(u[i] < gate)) continue;
    // dL/dP_s = 2 (P_s - P_t) / n, then through the softmax Jacobian
    double dot = 0.0;
    for (int cc = 0; cc < c; ++cc) {
      dot += 2.0 * (ps[cc * hw + i] - pt[cc * hw + i]) * inv * ps[cc * hw + i];
    }
    for (int cc = 0; cc < c; ++cc) {
      const double gp = 2.0 * (ps[cc * hw + i] - pt[cc * hw + i]) * inv;
      g[cc * hw + i] = ps[cc * hw + i] * (gp - dot);
    }
  }
  return grad;
}

double total_loss(double l_cl, double l_no, std::int64_t t,
                  const NoiseAwareConfig& cfg) {
  MPNN_CHECK_AS(NumericError, std::isfinite(l_cl) && std::isfinite(l_no),
                "total_loss: non-finite inputs L_cl=", l_cl, " L_no=", l_no);
  return cfg.beta * l_cl + lambda_schedule(t, cfg) * l_no;
}

}  // namespace mpnn::noise
