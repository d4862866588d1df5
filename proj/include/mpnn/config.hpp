#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mpnn/datasets.hpp"
#include "mpnn/model.hpp"
#include "mpnn/noise_aware.hpp"
#include "mpnn/trainer.hpp"

namespace mpnn::config {

struct DatasetConfig {
  std::string kind = "riga";  // riga | synth
  std::string root;
  std::vector<std::string> train_sources = {"BinRushed", "MESSIDOR"};
  std::vector<std::string> test_sources = {"Magrabia"};
  int rater = 1;  // training annotation
  int side = 256;

  // synthetic generation block (kind == "synth")
  std::uint64_t synth_seed = 7;
  int synth_train = 200;
  int synth_test = 50;
  int synth_side = 64;
  double boundary_noise = 0.3;
};

struct MpggdConfig {
  int k = 5;
  double phi = 0.93;
  int max_epochs = 100;
  std::uint64_t base_seed = 100;
};

struct EvalConfig {
  std::string target = "majority-vote";  // rater1 | majority-vote | clean
  bool use_teacher = true;
};

// Layered key-value run configuration. A file may name a base file via
// "include"; the including file's values win. MPNN_OUTPUT_DIR and MPNN_SEED
// environment variables override the loaded values.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  DatasetConfig dataset;
  MpggdConfig mpggd;
  noise::NoiseAwareConfig noise;
  train::Recipe recipe;
  EvalConfig eval;
  net::ArchConfig arch = net::ArchConfig::preset("base");

  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_json_text(const std::string& text);
  std::string to_json_text() const;  // canonical (sorted keys, 2-space indent)
  std::string hash() const;          // FNV-1a 64 of the canonical text, hex

  void validate() const;
};

// Directory-creation lock guarding a run directory against double writers.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& run_dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path lock_path_;
  bool held_ = false;
};

std::string fnv1a_hex(const std::string& data);

}  // namespace mpnn::config
