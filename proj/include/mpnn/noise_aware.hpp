#pragma once

#include <cstdint>
#include <vector>

#include "mpnn/types.hpp"

namespace mpnn::noise {

struct NoiseAwareConfig {
  int m = 8;               // teacher input perturbation count
  double sigma = 0.05;     // Gaussian noise std, standardized-intensity units
  double alpha = 0.99;     // EMA decay
  double w_max = 0.1;      // consistency weight ceiling
  std::int64_t t_max = 1;  // total training steps (schedule horizon)
  double beta = 1.0;       // clean-loss weight
  double h0_frac = 0.75;   // initial uncertainty threshold, fraction of ln(C)

  void validate() const;
};

// image + M independent Gaussian noise fields; deterministic in seed
std::vector<Tensor> perturb(const Tensor& image, int m, double sigma,
                            std::uint64_t seed);

// element-wise mean of M probability maps; stays on the simplex
ProbMap teacher_mean(const std::vector<ProbMap>& stack);

// Shannon entropy (natural log) of the averaged per-pixel distribution,
// 0*log(0) taken as 0; output {H,W} in [0, ln C]
Tensor entropy_map(const std::vector<ProbMap>& stack);

// Gaussian ramp from ~0 at t=0 to 1 at t=t_max
double ramp(std::int64_t t, std::int64_t t_max);

// consistency weight lambda(t) = w_max * exp(-5 (1 - t/t_max)^2)
double lambda_schedule(std::int64_t t, const NoiseAwareConfig& cfg);

// uncertainty gate H(t): fraction (h0 + (1-h0) * ramp) of ln(C), nondecreasing
double threshold_schedule(std::int64_t t, const NoiseAwareConfig& cfg);

// Mean cross-entropy -log P_s[y] over clean pixels. An empty clean set yields
// 0 and sets *empty (degenerate batches must not abort training).
double clean_loss(const ProbMap& probs, const LabelMask& labels,
                  const PixelPartition& part, bool* empty = nullptr);

// dL/dlogits for clean_loss (fused softmax + cross-entropy gradient)
Tensor clean_loss_grad_logits(const ProbMap& probs, const LabelMask& labels,
                              const PixelPartition& part);

// Mean squared class-vector distance ||P_s - P_t||^2 over noisy pixels whose
// uncertainty is strictly below the gate H; empty gate yields 0.
double noisy_loss(const ProbMap& probs_s, const ProbMap& probs_t,
                  const Tensor& uncertainty, double gate,
                  const PixelPartition& part, std::int64_t* gate_count = nullptr);

// dL/dlogits for noisy_loss (through the softmax Jacobian)
Tensor noisy_loss_grad_logits(const ProbMap& probs_s, const ProbMap& probs_t,
                              const Tensor& uncertainty, double gate,
                              const PixelPartition& part);

// beta * L_cl + lambda(t) * L_no; rejects non-finite inputs
double total_loss(double l_cl, double l_no, std::int64_t t,
                  const NoiseAwareConfig& cfg);

}  // namespace mpnn::noise
