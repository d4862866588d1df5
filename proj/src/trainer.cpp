#include "mpnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "mpnn/rng.hpp"

namespace mpnn::train {

using json = nlohmann::json;

namespace {
constexpr std::uint64_t kShuffleSalt = 0x0da7a0d3;
constexpr std::uint64_t kPerturbSalt = 0x9e1b0b5;
}  // namespace

void Recipe::validate() const {
  MPNN_CHECK_AS(ConfigError, lr0 > 0.0, "recipe: lr0 must be > 0");
  MPNN_CHECK_AS(ConfigError, decay_every > 0, "recipe: decay_every must be > 0");
  MPNN_CHECK_AS(ConfigError, decay_factor > 0.0 && decay_factor < 1.0,
                "recipe: decay_factor must be in (0,1)");
  MPNN_CHECK_AS(ConfigError, epochs >= 0, "recipe: epochs must be >= 0");
  MPNN_CHECK_AS(ConfigError, batch >= 1, "recipe: batch must be >= 1");
  MPNN_CHECK_AS(ConfigError, beta1 >= 0.0 && beta1 < 1.0, "recipe: beta1 in [0,1)");
  MPNN_CHECK_AS(ConfigError, beta2 >= 0.0 && beta2 < 1.0, "recipe: beta2 in [0,1)");
}

double lr_at(std::int64_t step, const Recipe& recipe) {
  MPNN_CHECK(step >= 0, "lr_at: negative step");
  const std::int64_t decades = step / recipe.decay_every;
  return recipe.lr0 * std::pow(recipe.decay_factor, static_cast<double>(decades));
}

net::ParamSet ema_update(const net::ParamSet& teacher, const net::ParamSet& student,
                         double alpha) {
  MPNN_CHECK(alpha >= 0.0 && alpha <= 1.0, "ema_update: alpha must be in [0,1]");
  MPNN_CHECK(teacher.shape_compatible(student), "ema_update: shape mismatch");
  net::ParamSet out;
  out.seed = teacher.seed;
  auto it = teacher.tensors.begin();
  auto jt = student.tensors.begin();
  for (; it != teacher.tensors.end(); ++it, ++jt) {
    Tensor t(std::vector<int>(it->second.shape()));
    const double* a = it->second.data();
    const double* b = jt->second.data();
    double* o = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i) {
      o[i] = alpha * a[i] + (1.0 - alpha) * b[i];
    }
    out.tensors.emplace(it->first, std::move(t));
  }
  return out;
}

void adam_step(net::ParamSet& params, const net::ParamSet& grads, AdamState& state,
               double lr, const Recipe& recipe) {
  MPNN_CHECK(params.shape_compatible(grads), "adam_step: grad shape mismatch");
  if (state.m.empty()) {
    for (const auto& [name, t] : params.tensors) {
      state.m.emplace(name, Tensor(std::vector<int>(t.shape())));
      state.v.emplace(name, Tensor(std::vector<int>(t.shape())));
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(recipe.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(recipe.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params.tensors) {
    const Tensor& g = grads.tensors.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    double* pp = p.data();
    const double* gp = g.data();
    double* mp = m.data();
    double* vp = v.data();
    for (std::int64_t i = 0; i < p.size(); ++i) {
      mp[i] = recipe.beta1 * mp[i] + (1.0 - recipe.beta1) * gp[i];
      vp[i] = recipe.beta2 * vp[i] + (1.0 - recipe.beta2) * gp[i] * gp[i];
      const double mhat = mp[i] / bc1;
      const double vhat = vp[i] / bc2;
      pp[i] -= lr * mhat / (std::sqrt(vhat) + recipe.eps);
    }
  }
}

Ablate parse_ablate(const std::string& s) {
  if (s == "none") return Ablate::kNone;
  if (s == "clean-only") return Ablate::kCleanOnly;
  if (s == "noisy-only") return Ablate::kNoisyOnly;
  throw ConfigError("unknown ablation '" + s +
                    "' (expected none | clean-only | noisy-only)");
}

std::string ablate_str(Ablate a) {
  switch (a) {
    case Ablate::kNone:
      return "none";
    case Ablate::kCleanOnly:
      return "clean-only";
    case Ablate::kNoisyOnly:
      return "noisy-only";
  }
  return "?";
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
  MPNN_CHECK(out_.good(), "cannot open metrics log ", path.string());
  out_ << "step,lr,lambda,H,loss_cl,loss_no,loss_total,gate_count,empty_clean\n";
}

void MetricsLog::append(const StepStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%lld,%d\n",
                static_cast<long long>(s.step), s.lr, s.lambda, s.gate_h, s.loss_cl,
                s.loss_no, s.loss_total, static_cast<long long>(s.gate_count),
                s.empty_clean);
  out_ << buf;
  out_.flush();
}

net::Checkpoint state_to_checkpoint(const TrainState& state,
                                    const net::ArchConfig& arch,
                                    const std::string& extra_json) {
  net::Checkpoint ckpt;
  ckpt.arch = arch;
  ckpt.seed = state.seed;
  ckpt.step = state.t;
  json extra = json::parse(extra_json);
  extra["t_max"] = state.t_max;
  extra["opt_t"] = state.opt.t;
  extra["has_teacher"] = state.has_teacher();
  ckpt.extra_json = extra.dump();
  for (const auto& [n, t] : state.student.tensors) ckpt.blobs.emplace("student." + n, t);
  for (const auto& [n, t] : state.teacher.tensors) ckpt.blobs.emplace("teacher." + n, t);
  for (const auto& [n, t] : state.opt.m) ckpt.blobs.emplace("opt.m." + n, t);
  for (const auto& [n, t] : state.opt.v) ckpt.blobs.emplace("opt.v." + n, t);
  return ckpt;
}

TrainState state_from_checkpoint(const net::Checkpoint& ckpt) {
  TrainState st;
  st.t = ckpt.step;
  st.seed = ckpt.seed;
  const json extra = json::parse(ckpt.extra_json);
  st.t_max = extra.value("t_max", std::int64_t{0});
  st.opt.t = extra.value("opt_t", std::int64_t{0});
  st.student.seed = ckpt.seed;
  st.teacher.seed = ckpt.seed;
  for (const auto& [name, t] : ckpt.blobs) {
    if (name.rfind("student.", 0) == 0) {
      st.student.tensors.emplace(name.substr(8), t);
    } else if (name.rfind("teacher.", 0) == 0) {
      st.teacher.tensors.emplace(name.substr(8), t);
    } else if (name.rfind("opt.m.", 0) == 0) {
      st.opt.m.emplace(name.substr(6), t);
    } else if (name.rfind("opt.v.", 0) == 0) {
      st.opt.v.emplace(name.substr(6), t);
    }
  }
  return st;
}

namespace {

void axpy_params(net::ParamSet& acc, const net::ParamSet& g, double scale) {
  if (acc.tensors.empty()) {
    for (const auto& [name, t] : g.tensors) {
      acc.tensors.emplace(name, Tensor(std::vector<int>(t.shape())));
    }
  }
  for (const auto& [name, t] : g.tensors) {
    Tensor& a = acc.tensors.at(name);
    double* ap = a.data();
    const double* tp = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i) ap[i] += scale * tp[i];
  }
}

std::string batch_ids(const Dataset& dataset, const std::vector<int>& batch_idx) {
  std::string s;
  for (int i : batch_idx) {
    if (!s.empty()) s += ", ";
    s += dataset.samples[static_cast<std::size_t>(i)].id;
  }
  return s;
}

}  // namespace

StepStats supervised_step(TrainState& state, const net::Network& network,
                          const Dataset& dataset, const std::vector<int>& batch_idx,
                          const Recipe& recipe) {
  MPNN_CHECK(!batch_idx.empty(), "supervised_step: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch_idx.size());
  net::ParamSet grad_acc;
  double loss_sum = 0.0;

  for (int idx : batch_idx) {
    const ImageSample& s = dataset.samples[static_cast<std::size_t>(idx)];
    net::Trace trace;
    const Tensor logits = network.forward_logits(state.student, s.image, &trace);
    const ProbMap probs = net::softmax(logits);
    const PixelPartition all = PixelPartition::all_clean(s.label.h, s.label.w);
    loss_sum += noise::clean_loss(probs, s.label, all);
    Tensor dlogits = noise::clean_loss_grad_logits(probs, s.label, all);
    double* dp = dlogits.data();
    for (std::int64_t i = 0; i < dlogits.size(); ++i) dp[i] *= inv_b;
    axpy_params(grad_acc, network.backward(state.student, trace, dlogits), 1.0);
  }

  const double loss = loss_sum * inv_b;
  MPNN_CHECK_AS(NumericError, std::isfinite(loss),
                "non-finite loss in supervised step ", state.t, "; batch: ",
                batch_ids(dataset, batch_idx));

  StepStats st;
  st.step = state.t;
  st.lr = lr_at(state.t, recipe);
  st.loss_cl = loss;
  st.loss_total = loss;
  adam_step(state.student, grad_acc, state.opt, st.lr, recipe);
  state.t += 1;
  return st;
}

StepStats mpnn_step(TrainState& state, const net::Network& network,
                    const Dataset& dataset,
                    const std::vector<const PixelPartition*>& parts,
                    const std::vector<int>& batch_idx, const Recipe& recipe,
                    const noise::NoiseAwareConfig& cfg, Ablate ablate) {
  MPNN_CHECK(!batch_idx.empty(), "mpnn_step: empty batch");
  MPNN_CHECK(state.has_teacher(), "mpnn_step: teacher parameters missing");

  StepStats st;
  st.step = state.t;
  st.lr = lr_at(state.t, recipe);
  st.lambda = (ablate == Ablate::kCleanOnly) ? 0.0 : noise::lambda_schedule(state.t, cfg);
  st.gate_h = noise::threshold_schedule(state.t, cfg);

  const bool use_consistency = st.lambda > 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch_idx.size());
  net::ParamSet grad_acc;
  double sum_cl = 0.0, sum_no = 0.0, sum_total = 0.0;

  for (int idx : batch_idx) {
    const ImageSample& s = dataset.samples[static_cast<std::size_t>(idx)];
    const PixelPartition& part = *parts[static_cast<std::size_t>(idx)];

    net::Trace trace;
    const Tensor logits = network.forward_logits(state.student, s.image, &trace);
    const ProbMap probs = net::softmax(logits);

    // noisy-only ablation drops the partition restriction on the supervised
    // term: cross-entropy runs over every pixel
    const bool all_pixels_ce = (ablate == Ablate::kNoisyOnly);
    const PixelPartition ce_part =
        all_pixels_ce ? PixelPartition::all_clean(s.label.h, s.label.w) : part;

    bool empty_clean = false;
    const double l_cl = noise::clean_loss(probs, s.label, ce_part, &empty_clean);
    if (empty_clean) st.empty_clean += 1;
    Tensor dlogits = noise::clean_loss_grad_logits(probs, s.label, ce_part);
    double* dp = dlogits.data();
    if (cfg.beta != 1.0) {
      for (std::int64_t i = 0; i < dlogits.size(); ++i) dp[i] *= cfg.beta;
    }

    double l_no = 0.0;
    if (use_consistency) {
      const std::uint64_t pseed =
          rng::mix(state.seed, kPerturbSalt, static_cast<std::uint64_t>(state.t),
                   static_cast<std::uint64_t>(idx));
      const std::vector<Tensor> inputs = noise::perturb(s.image, cfg.m, cfg.sigma, pseed);
      std::vector<ProbMap> stack;
      stack.reserve(inputs.size());
      for (const Tensor& x : inputs) stack.push_back(network.forward(state.teacher, x));
      const ProbMap p_t = noise::teacher_mean(stack);
      const Tensor u = noise::entropy_map(stack);

      std::int64_t gate = 0;
      l_no = noise::noisy_loss(probs, p_t, u, st.gate_h, part, &gate);
      st.gate_count += gate;
      if (gate > 0) {
        const Tensor dno =
            noise::noisy_loss_grad_logits(probs, p_t, u, st.gate_h, part);
        const double* np = dno.data();
        for (std::int64_t i = 0; i < dlogits.size(); ++i) {
          dp[i] += st.lambda * np[i];
        }
      }
    }

    const double item_total = cfg.beta * l_cl + st.lambda * l_no;
    sum_cl += l_cl;
    sum_no += l_no;
    sum_total += item_total;

    for (std::int64_t i = 0; i < dlogits.size(); ++i) dp[i] *= inv_b;
    axpy_params(grad_acc, network.backward(state.student, trace, dlogits), 1.0);
  }

  st.loss_cl = sum_cl * inv_b;
  st.loss_no = sum_no * inv_b;
  st.loss_total = sum_total * inv_b;
  MPNN_CHECK_AS(NumericError, std::isfinite(st.loss_total),
                "non-finite loss at step ", state.t, "; batch: ",
                batch_ids(dataset, batch_idx));

  adam_step(state.student, grad_acc, state.opt, st.lr, recipe);
  state.teacher = ema_update(state.teacher, state.student, cfg.alpha);
  state.t += 1;
  return st;
}

std::vector<int> epoch_order(std::uint64_t seed, int epoch, int n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rng::Prng prng(rng::mix(seed, kShuffleSalt, static_cast<std::uint64_t>(epoch)));
  // Fisher-Yates, fixed draw order
  for (int i = n - 1; i > 0; --i) {
    const int j = prng.uniform_int(0, i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

namespace {

std::int64_t steps_per_epoch(std::size_t n, int batch) {
  return static_cast<std::int64_t>((n + static_cast<std::size_t>(batch) - 1) /
                                   static_cast<std::size_t>(batch));
}

// Shared epoch loop over a step functor.
template <class StepFn>
void run_epochs(TrainState& state, const Dataset& dataset, const Recipe& recipe,
                MetricsLog* log, const EpochCallback& epoch_end, StepFn&& step_fn) {
  const int n = static_cast<int>(dataset.size());
  const std::int64_t spe = steps_per_epoch(dataset.size(), recipe.batch);
  StepStats last;
  for (int epoch = static_cast<int>(state.t / spe); epoch < recipe.epochs; ++epoch) {
    const std::vector<int> order = epoch_order(state.seed, epoch, n);
    std::int64_t b = state.t % spe;  // nonzero only when resuming mid-epoch
    for (; b < spe; ++b) {
      const auto first = order.begin() + b * recipe.batch;
      const auto last_it =
          order.begin() + std::min<std::int64_t>((b + 1) * recipe.batch, n);
      const std::vector<int> batch_idx(first, last_it);
      last = step_fn(batch_idx);
      if (log) log->append(last);
    }
    if (epoch_end && epoch_end(epoch, state, last)) return;
  }
}

}  // namespace

net::ParamSet train_baseline(const Dataset& dataset, const net::Network& network,
                             const Recipe& recipe, std::uint64_t seed, MetricsLog* log,
                             const EpochCallback& epoch_end, TrainState* resume) {
  recipe.validate();
  MPNN_CHECK(!dataset.samples.empty(), "train_baseline: empty dataset");

  TrainState local;
  TrainState& state = resume ? *resume : local;
  if (!resume || state.student.tensors.empty()) {
    state.student = net::init_network(network.config(), seed);
    state.seed = seed;
    state.t = 0;
    state.t_max = steps_per_epoch(dataset.size(), recipe.batch) * recipe.epochs;
  }
  run_epochs(state, dataset, recipe, log, epoch_end, [&](const std::vector<int>& idx) {
    return supervised_step(state, network, dataset, idx, recipe);
  });
  return state.student;
}

MpnnResult train_mpnn(const Dataset& dataset,
                      const std::map<std::string, PixelPartition>& partitions,
                      const net::Network& network, const Recipe& recipe,
                      noise::NoiseAwareConfig cfg, std::uint64_t seed, Ablate ablate,
                      MetricsLog* log, const EpochCallback& epoch_end,
                      TrainState* resume) {
  recipe.validate();
  MPNN_CHECK(!dataset.samples.empty(), "train_mpnn: empty dataset");

  std::vector<const PixelPartition*> parts;
  parts.reserve(dataset.size());
  for (const auto& s : dataset.samples) {
    auto it = partitions.find(s.id);
    MPNN_CHECK(it != partitions.end(), "train_mpnn: no partition for sample '", s.id,
               "'");
    MPNN_CHECK(it->second.h == s.label.h && it->second.w == s.label.w,
               "train_mpnn: partition shape mismatch for '", s.id, "'");
    parts.push_back(&it->second);
  }

  TrainState local;
  TrainState& state = resume ? *resume : local;
  if (!resume || state.student.tensors.empty()) {
    state.student = net::init_network(network.config(), seed);
    state.teacher = state.student;  // teacher starts as a copy
    state.seed = seed;
    state.t = 0;
    state.t_max = steps_per_epoch(dataset.size(), recipe.batch) * recipe.epochs;
  }
  cfg.t_max = std::max<std::int64_t>(state.t_max, 1);
  cfg.validate();

  run_epochs(state, dataset, recipe, log, epoch_end, [&](const std::vector<int>& idx) {
    return mpnn_step(state, network, dataset, parts, idx, recipe, cfg, ablate);
  });

  MpnnResult res;
  res.student = state.student;
  res.teacher = state.teacher;
  res.t_max = state.t_max;
  return res;
}

}  // namespace mpnn::train
