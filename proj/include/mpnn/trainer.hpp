#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mpnn/model.hpp"
#include "mpnn/noise_aware.hpp"
#include "mpnn/types.hpp"

namespace mpnn::train {

struct Recipe {
  double lr0 = 5e-4;
  int decay_every = 2000;
  double decay_factor = 0.1;
  int epochs = 100;
  int batch = 8;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;

  void validate() const;
};

// step-decay schedule: lr0 * decay_factor^floor(step / decay_every)
double lr_at(std::int64_t step, const Recipe& recipe);

// elementwise theta_t~ = alpha * theta_(t-1)~ + (1 - alpha) * theta_t
net::ParamSet ema_update(const net::ParamSet& teacher, const net::ParamSet& student,
                         double alpha);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t t = 0;
};

void adam_step(net::ParamSet& params, const net::ParamSet& grads, AdamState& state,
               double lr, const Recipe& recipe);

enum class Ablate { kNone, kCleanOnly, kNoisyOnly };
Ablate parse_ablate(const std::string& s);
std::string ablate_str(Ablate a);

struct StepStats {
  std::int64_t step = 0;
  double lr = 0, lambda = 0, gate_h = 0;
  double loss_cl = 0, loss_no = 0, loss_total = 0;
  std::int64_t gate_count = 0;
  int empty_clean = 0;  // batch items whose clean set was empty
};

// Per-step CSV sink for a run directory.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void append(const StepStats& s);

 private:
  std::ofstream out_;
};

struct TrainState {
  net::ParamSet student;
  net::ParamSet teacher;  // empty for plain supervised training
  AdamState opt;
  std::int64_t t = 0;
  std::int64_t t_max = 0;
  std::uint64_t seed = 0;

  bool has_teacher() const { return !teacher.tensors.empty(); }
};

// Checkpoint round-trip for exact resume (student, teacher, optimizer, step).
net::Checkpoint state_to_checkpoint(const TrainState& state,
                                    const net::ArchConfig& arch,
                                    const std::string& extra_json = "{}");
TrainState state_from_checkpoint(const net::Checkpoint& ckpt);

// One supervised step: cross-entropy over all pixels of the batch samples.
StepStats supervised_step(TrainState& state, const net::Network& network,
                          const Dataset& dataset, const std::vector<int>& batch_idx,
                          const Recipe& recipe);

// One MPNN step: clean-pixel CE on the student plus uncertainty-gated
// consistency against the perturbation-averaged teacher; optimizer update on
// the student only, then the EMA teacher update.
StepStats mpnn_step(TrainState& state, const net::Network& network,
                    const Dataset& dataset,
                    const std::vector<const PixelPartition*>& parts,
                    const std::vector<int>& batch_idx, const Recipe& recipe,
                    const noise::NoiseAwareConfig& cfg, Ablate ablate);

// deterministic epoch order: shuffle of [0, n) keyed by (seed, epoch)
std::vector<int> epoch_order(std::uint64_t seed, int epoch, int n);

// Called at each epoch end; return true to stop training early.
using EpochCallback =
    std::function<bool(int epoch, const TrainState& state, const StepStats& last)>;

// Plain supervised training on the dataset labels.
net::ParamSet train_baseline(const Dataset& dataset, const net::Network& network,
                             const Recipe& recipe, std::uint64_t seed,
                             MetricsLog* log = nullptr,
                             const EpochCallback& epoch_end = nullptr,
                             TrainState* resume = nullptr);

struct MpnnResult {
  net::ParamSet student;
  net::ParamSet teacher;
  std::int64_t t_max = 0;
};

// Teacher-student training. cfg.t_max is overwritten with the actual step
// count (epochs * ceil(N / batch)); the teacher starts as a copy of the
// student. Partitions must cover every dataset id.
MpnnResult train_mpnn(const Dataset& dataset,
                      const std::map<std::string, PixelPartition>& partitions,
                      const net::Network& network, const Recipe& recipe,
                      noise::NoiseAwareConfig cfg, std::uint64_t seed,
                      Ablate ablate = Ablate::kNone, MetricsLog* log = nullptr,
                      const EpochCallback& epoch_end = nullptr,
                      TrainState* resume = nullptr);

}  // namespace mpnn::train
