#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "mpnn/config.hpp"
#include "mpnn/datasets.hpp"
#include "mpnn/evaluate.hpp"
#include "mpnn/model.hpp"
#include "mpnn/mpggd.hpp"
#include "mpnn/netpbm.hpp"
#include "mpnn/noise_aware.hpp"
#include "mpnn/rng.hpp"
#include "mpnn/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mpnn;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
};

config::RunConfig load_config(const CommonOpts& opts) {
  MPNN_CHECK_AS(ConfigError, !opts.config_path.empty(), "missing --config");
  config::RunConfig cfg = config::RunConfig::load(opts.config_path);
  if (opts.output_dir) cfg.output_dir = *opts.output_dir;
  if (opts.seed) cfg.seed = *opts.seed;
  cfg.validate();
  return cfg;
}

data::LabelSelector train_selector(const config::RunConfig& cfg) {
  // training always supervises on a single annotation source
  return data::LabelSelector::rater_k(cfg.dataset.kind == "synth" ? 1
                                                                  : cfg.dataset.rater);
}

RawDataset load_train_raw(const config::RunConfig& cfg) {
  const fs::path root = cfg.dataset.root;
  if (cfg.dataset.kind == "synth") {
    return data::load_split(root, {"train"}, train_selector(cfg));
  }
  return data::load_split(root, cfg.dataset.train_sources, train_selector(cfg));
}

RawDataset load_test_raw(const config::RunConfig& cfg) {
  const data::LabelSelector sel = data::LabelSelector::parse(cfg.eval.target);
  const fs::path root = cfg.dataset.root;
  if (cfg.dataset.kind == "synth") {
    return data::load_split(root, {"test"}, sel);
  }
  return data::load_split(root, cfg.dataset.test_sources, sel);
}

json stats_to_json(const data::ChannelStats& st) {
  return json{{"mean", st.mean}, {"stdev", st.stdev}};
}

data::ChannelStats stats_from_json(const json& j) {
  data::ChannelStats st;
  st.mean = j.at("mean").get<std::array<double, 3>>();
  st.stdev = j.at("stdev").get<std::array<double, 3>>();
  return st;
}

void write_stats(const fs::path& path, const data::ChannelStats& st) {
  std::ofstream out(path, std::ios::trunc);
  MPNN_CHECK(out.good(), "cannot write ", path.string());
  out << stats_to_json(st).dump(2) << "\n";
}

// Training-split channel statistics are frozen once per pipeline; every stage
// recomputes them from the same split, so values agree bit-for-bit.
data::ChannelStats train_stats(const config::RunConfig& cfg, const RawDataset& raw) {
  return data::compute_channel_stats(raw, cfg.dataset.side);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  MPNN_CHECK(out.good(), "cannot write ", path.string());
  out << text;
}

// -------------------------------------------------------------------------
// synth
// -------------------------------------------------------------------------

int cmd_synth(const CommonOpts& opts, bool force) {
  const config::RunConfig cfg = load_config(opts);
  MPNN_CHECK_AS(ConfigError, cfg.dataset.kind == "synth",
                "synth requires dataset.kind = \"synth\"");
  const fs::path root = cfg.dataset.root;
  MPNN_CHECK_AS(ConfigError, !root.empty(), "dataset.root must be set");
  if (fs::exists(root) && !fs::is_empty(root)) {
    MPNN_CHECK_AS(ConfigError, force, "dataset directory ", root.string(),
                  " already exists; pass --force to regenerate");
    fs::remove_all(root);
  }

  data::SynthParams train_params{cfg.dataset.synth_train, cfg.dataset.synth_side,
                                 cfg.dataset.boundary_noise};
  data::SynthParams test_params{cfg.dataset.synth_test, cfg.dataset.synth_side,
                                cfg.dataset.boundary_noise};
  const auto train_pair =
      data::synth_generate(rng::mix(cfg.dataset.synth_seed, 1), train_params);
  const auto test_pair =
      data::synth_generate(rng::mix(cfg.dataset.synth_seed, 2), test_params);
  data::write_synth_split(root / "train", train_pair);
  data::write_synth_split(root / "test", test_pair);

  json manifest;
  manifest["synth_seed"] = cfg.dataset.synth_seed;
  manifest["side"] = cfg.dataset.synth_side;
  manifest["boundary_noise"] = cfg.dataset.boundary_noise;
  manifest["train_count"] = cfg.dataset.synth_train;
  manifest["test_count"] = cfg.dataset.synth_test;
  json train_ids = json::array(), test_ids = json::array();
  for (const auto& s : train_pair.clean.samples) train_ids.push_back(s.id);
  for (const auto& s : test_pair.clean.samples) test_ids.push_back(s.id);
  manifest["train_ids"] = train_ids;
  manifest["test_ids"] = test_ids;
  manifest["config_hash"] = cfg.hash();
  write_text(root / "manifest.json", manifest.dump(2) + "\n");

  std::printf("synth: wrote %d train + %d test samples (side %d, boundary_noise %g) to %s\n",
              cfg.dataset.synth_train, cfg.dataset.synth_test, cfg.dataset.synth_side,
              cfg.dataset.boundary_noise, root.string().c_str());
  return 0;
}

// -------------------------------------------------------------------------
// pseudo
// -------------------------------------------------------------------------

int cmd_pseudo(const CommonOpts& opts) {
  const config::RunConfig cfg = load_config(opts);
  const fs::path out = cfg.output_dir;
  const config::DirLock lock(out / "pseudo");

  const RawDataset raw = load_train_raw(cfg);
  const data::ChannelStats stats = train_stats(cfg, raw);
  const Dataset dataset = data::preprocess_dataset(raw, cfg.dataset.side, stats);
  fs::create_directories(out);
  write_stats(out / "stats.json", stats);

  const net::Network network(cfg.arch);
  const mpggd::PseudoLabelSet ps = mpggd::generate_pseudo_labels(
      dataset, network, cfg.recipe, cfg.mpggd.k, cfg.mpggd.phi, cfg.mpggd.max_epochs,
      cfg.mpggd.base_seed);
  mpggd::save_pseudo_store(out / "pseudo", ps);

  for (const auto& m : ps.members) {
    std::printf("pseudo: member seed %llu stopped at epoch %d with DSC_m %.4f\n",
                static_cast<unsigned long long>(m.seed), m.stop_epoch, m.dsc);
  }
  std::printf("pseudo: wrote %d masks x %zu images to %s\n", ps.k, ps.masks.size(),
              (out / "pseudo").string().c_str());
  return 0;
}

// -------------------------------------------------------------------------
// partition
// -------------------------------------------------------------------------

int cmd_partition(const CommonOpts& opts) {
  const config::RunConfig cfg = load_config(opts);
  const fs::path out = cfg.output_dir;
  MPNN_CHECK_AS(ConfigError, fs::exists(out / "pseudo" / "manifest.json"),
                "no pseudo-label store under ", out.string(),
                " (run the pseudo subcommand first)");
  const config::DirLock lock(out / "partition");

  const mpggd::PseudoLabelSet ps = mpggd::load_pseudo_store(out / "pseudo");
  std::map<std::string, PixelPartition> parts;
  std::int64_t total_cl = 0, total_no = 0;
  for (const auto& [id, masks] : ps.masks) {
    PixelPartition p = mpggd::partition_from_masks(masks);
    total_cl += p.s_cl;
    total_no += p.s_no;
    parts.emplace(id, std::move(p));
  }
  mpggd::save_partition_store(out / "partition", parts, ps.k, ps.phi, ps.seeds);
  std::printf("partition: %zu images, s_cl %lld, s_no %lld\n", parts.size(),
              static_cast<long long>(total_cl), static_cast<long long>(total_no));
  return 0;
}

// -------------------------------------------------------------------------
// train
// -------------------------------------------------------------------------

void save_final_checkpoint(const fs::path& path, const train::TrainState& state,
                           const net::ArchConfig& arch,
                           const data::ChannelStats& stats, const std::string& role,
                           const std::string& config_hash) {
  json extra;
  extra["stats"] = stats_to_json(stats);
  extra["role"] = role;
  extra["config_hash"] = config_hash;
  net::save_checkpoint(path, train::state_to_checkpoint(state, arch, extra.dump()));
}

int cmd_train(const CommonOpts& opts, const std::string& mode,
              const std::string& ablate_str, const std::string& run_name,
              int checkpoint_every, const std::string& resume_path) {
  const config::RunConfig cfg = load_config(opts);
  MPNN_CHECK_AS(ConfigError, mode == "baseline" || mode == "mpnn",
                "--mode must be baseline or mpnn, got '", mode, "'");
  const train::Ablate ablate = train::parse_ablate(ablate_str);

  const fs::path out = cfg.output_dir;
  std::string name = run_name;
  if (name.empty()) {
    name = "train-" + mode;
    if (mode == "mpnn" && ablate != train::Ablate::kNone) name += "-" + ablate_str;
  }
  const fs::path run_dir = out / name;
  const config::DirLock lock(run_dir);

  // config snapshot + hash, so a run is always traceable to its inputs
  write_text(run_dir / "config.json", cfg.to_json_text());
  write_text(run_dir / "config_hash.txt", cfg.hash() + "\n");

  const RawDataset raw = load_train_raw(cfg);
  const data::ChannelStats stats = train_stats(cfg, raw);
  const Dataset dataset = data::preprocess_dataset(raw, cfg.dataset.side, stats);
  write_stats(run_dir / "stats.json", stats);

  const net::Network network(cfg.arch);
  train::MetricsLog log(run_dir / "metrics.csv");

  train::TrainState state;  // empty -> fresh initialization inside the trainer
  if (!resume_path.empty()) {
    state = train::state_from_checkpoint(net::load_checkpoint(resume_path));
  }

  const std::string role = (mode == "mpnn") ? "student+teacher" : "student";
  auto epoch_end = [&](int epoch, const train::TrainState& st, const train::StepStats&) {
    if (checkpoint_every > 0 && (epoch + 1) % checkpoint_every == 0 &&
        epoch + 1 < cfg.recipe.epochs) {
      save_final_checkpoint(run_dir / ("ckpt-epoch" + std::to_string(epoch + 1) + ".ckpt"),
                            st, cfg.arch, stats, role, cfg.hash());
    }
    return false;
  };

  net::ParamSet eval_params;
  if (mode == "baseline") {
    train::train_baseline(dataset, network, cfg.recipe, cfg.seed, &log, epoch_end,
                          &state);
    eval_params = state.student;
  } else {
    MPNN_CHECK_AS(ConfigError, fs::exists(out / "partition" / "manifest.json"),
                  "mpnn mode needs a partition store under ", out.string(),
                  " (run pseudo + partition first)");
    const auto partitions = mpggd::load_partition_store(out / "partition");
    train::train_mpnn(dataset, partitions, network, cfg.recipe, cfg.noise, cfg.seed,
                      ablate, &log, epoch_end, &state);
    eval_params = cfg.eval.use_teacher ? state.teacher : state.student;
  }
  save_final_checkpoint(run_dir / "final.ckpt", state, cfg.arch, stats, role,
                        cfg.hash());

  // final report on the configured test split
  const RawDataset test_raw = load_test_raw(cfg);
  const Dataset test = data::preprocess_dataset(test_raw, cfg.dataset.side, stats);
  const std::string method =
      (mode == "mpnn") ? ("mpnn" + (ablate == train::Ablate::kNone
                                        ? std::string()
                                        : "-" + ablate_str))
                       : "baseline";
  const metrics::MetricsReport report =
      metrics::evaluate_model(network, eval_params, test, method, cfg.eval.target);
  metrics::emit_report({report}, run_dir / "report.csv");
  metrics::emit_per_sample(report, run_dir / "report_samples.csv");

  std::printf("train: %s done; IoU_disc %.2f IoU_cup %.2f Dice_disc %.2f Dice_cup %.2f (%s)\n",
              method.c_str(), report.iou_disc, report.iou_cup, report.dice_disc,
              report.dice_cup, cfg.eval.target.c_str());
  return 0;
}

// -------------------------------------------------------------------------
// eval
// -------------------------------------------------------------------------

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path,
             bool use_student, const std::string& method_name,
             const std::string& out_path) {
  const config::RunConfig cfg = load_config(opts);
  const net::Checkpoint ckpt = net::load_checkpoint(checkpoint_path);

  const json extra = json::parse(ckpt.extra_json);
  MPNN_CHECK_AS(ConfigError, extra.contains("stats"),
                "checkpoint has no frozen channel statistics: ", checkpoint_path);
  const data::ChannelStats stats = stats_from_json(extra.at("stats"));

  const bool want_teacher = !use_student && cfg.eval.use_teacher;
  const std::string prefix = want_teacher ? "teacher." : "student.";
  net::ParamSet params;
  params.seed = ckpt.seed;
  for (const auto& [name, t] : ckpt.blobs) {
    if (name.rfind(prefix, 0) == 0) params.tensors.emplace(name.substr(prefix.size()), t);
  }
  MPNN_CHECK_AS(ConfigError, !params.tensors.empty(), "checkpoint has no ", prefix,
                " weights: ", checkpoint_path);

  // structural arch check: the blob set must match the descriptor exactly
  const auto specs = net::param_specs(ckpt.arch);
  MPNN_CHECK_AS(ConfigError, specs.size() == params.tensors.size(),
                "checkpoint/architecture mismatch: ", params.tensors.size(),
                " tensors vs ", specs.size(), " expected");
  for (const auto& spec : specs) {
    auto it = params.tensors.find(spec.name);
    MPNN_CHECK_AS(ConfigError,
                  it != params.tensors.end() && it->second.shape() == spec.shape,
                  "checkpoint/architecture mismatch at tensor '", spec.name, "'");
  }

  const net::Network network(ckpt.arch);
  const RawDataset test_raw = load_test_raw(cfg);
  const Dataset test = data::preprocess_dataset(test_raw, cfg.dataset.side, stats);

  std::string method = method_name;
  if (method.empty()) method = want_teacher ? "teacher" : "student";
  const metrics::MetricsReport report =
      metrics::evaluate_model(network, params, test, method, cfg.eval.target);

  fs::path out = out_path.empty() ? fs::path(cfg.output_dir) / "eval-report.csv"
                                  : fs::path(out_path);
  metrics::emit_report({report}, out);
  fs::path samples_path = out;
  samples_path.replace_extension(".samples.csv");
  metrics::emit_per_sample(report, samples_path);

  std::printf("eval: %s on %s -> IoU_disc %.2f IoU_cup %.2f Dice_disc %.2f Dice_cup %.2f\n",
              method.c_str(), cfg.eval.target.c_str(), report.iou_disc, report.iou_cup,
              report.dice_disc, report.dice_cup);
  return 0;
}

// -------------------------------------------------------------------------
// report
// -------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_path) {
  std::vector<metrics::MetricsReport> merged;
  for (const auto& p : inputs) {
    for (const auto& row : metrics::parse_report(p)) {
      metrics::MetricsReport r;
      r.method = row.method;
      r.target = row.target;
      r.iou_disc = row.iou_disc;
      r.iou_cup = row.iou_cup;
      r.dice_disc = row.dice_disc;
      r.dice_cup = row.dice_cup;
      merged.push_back(std::move(r));
    }
  }
  metrics::emit_report(merged, out_path);
  std::printf("report: merged %zu rows into %s\n", merged.size(), out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiple-pseudo-label noise-aware segmentation pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::uint64_t seed_flag = 0;
  std::string output_flag;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opts.config_path, "run configuration (json)")
        ->required();
    sub->add_option("--seed", seed_flag, "override the run seed")
        ->each([&](const std::string&) { opts.seed = seed_flag; });
    sub->add_option("-o,--output-dir", output_flag, "override output_dir")
        ->each([&](const std::string&) { opts.output_dir = output_flag; });
  };

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  bool force = false;
  add_common(synth);
  synth->add_flag("--force", force, "overwrite an existing dataset directory");

  // pseudo
  auto* pseudo = app.add_subcommand("pseudo", "train the ensemble and emit pseudo-labels");
  add_common(pseudo);

  // partition
  auto* part = app.add_subcommand("partition", "consensus clean/noisy pixel partition");
  add_common(part);

  // train
  auto* tr = app.add_subcommand("train", "baseline or teacher-student training");
  std::string mode = "mpnn", ablate = "none", run_name, resume;
  int checkpoint_every = 0;
  add_common(tr);
  tr->add_option("--mode", mode, "baseline | mpnn")->capture_default_str();
  tr->add_option("--ablate", ablate, "none | clean-only | noisy-only")
      ->capture_default_str();
  tr->add_option("--run-name", run_name, "run directory name under output_dir");
  tr->add_option("--checkpoint-every", checkpoint_every,
                 "save a checkpoint every N epochs (0: final only)");
  tr->add_option("--resume", resume, "resume from a checkpoint file");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string ckpt_path, method_name, eval_out;
  bool use_student = false;
  add_common(ev);
  ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  ev->add_flag("--student", use_student, "evaluate student weights instead of teacher");
  ev->add_option("--method", method_name, "method label for the report row");
  ev->add_option("--out", eval_out, "report csv path");

  // report
  auto* rep = app.add_subcommand("report", "merge report csv files");
  std::vector<std::string> report_inputs;
  std::string report_out;
  rep->add_option("--out", report_out, "merged csv path")->required();
  rep->add_option("inputs", report_inputs, "input report csv files")->required();

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(opts, force);
    if (pseudo->parsed()) return cmd_pseudo(opts);
    if (part->parsed()) return cmd_partition(opts);
    if (tr->parsed())
      return cmd_train(opts, mode, ablate, run_name, checkpoint_every, resume);
    if (ev->parsed())
      return cmd_eval(opts, ckpt_path, use_student, method_name, eval_out);
    if (rep->parsed()) return cmd_report(report_inputs, report_out);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ThresholdError& e) {
    std::fprintf(stderr, "threshold not reached: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
