#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mpnn/types.hpp"

namespace mpnn::net {

// Descriptor for the encoder-decoder backbone. Each level halves the spatial
// resolution with a strided conv and is mirrored by a decoder stage that
// upsamples and adds the encoder feature map back in (LinkNet-style additive
// skips). Presets:
//   "micro" - 1 level, for finite-difference checks on 4x4 inputs
//   "tiny"  - 2 levels, CPU-scale runs on 64x64 synthetic data
//   "base"  - 4 levels, 256x256 fundus images
struct ArchConfig {
  std::string name = "tiny";
  int in_channels = 3;
  int num_classes = 3;
  int stem_channels = 12;
  std::vector<int> level_channels = {24, 48};

  static ArchConfig preset(const std::string& name);
  void validate() const;
  int depth() const { return static_cast<int>(level_channels.size()); }
  bool operator==(const ArchConfig& o) const = default;
};

// Named weights of one backbone instance. Students, teachers and MPGGD
// ensemble members are all just ParamSets over the same ArchConfig.
struct ParamSet {
  std::map<std::string, Tensor> tensors;
  std::uint64_t seed = 0;

  bool shape_compatible(const ParamSet& o) const;
  bool equals(const ParamSet& o) const;
};

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
};

// Canonical parameter list (order is the serialization and init order).
std::vector<ParamSpec> param_specs(const ArchConfig& cfg);

// He-normal init, deterministic in (cfg, seed).
ParamSet init_network(const ArchConfig& cfg, std::uint64_t seed);

// Activation caches for one forward pass, consumed by backward().
struct ConvCache {
  Tensor input;
  Tensor preact;
};

struct Trace {
  ConvCache stem;
  std::vector<ConvCache> enc_a;  // strided conv per level
  std::vector<ConvCache> enc_b;  // second conv per level
  std::vector<ConvCache> dec;    // decoder conv per level (index l-1)
  Tensor head_input;
  Tensor logits;
};

class Network {
 public:
  explicit Network(ArchConfig cfg);

  const ArchConfig& config() const { return cfg_; }

  // Raw class scores {C,H,W}. Pass a trace to enable backward().
  Tensor forward_logits(const ParamSet& params, const Tensor& image,
                        Trace* trace = nullptr) const;

  // Per-pixel softmax probabilities.
  ProbMap forward(const ParamSet& params, const Tensor& image) const;

  // Gradients w.r.t. every parameter for the given dL/dlogits.
  ParamSet backward(const ParamSet& params, const Trace& trace,
                    const Tensor& dlogits) const;

  LabelMask predict_mask(const ParamSet& params, const Tensor& image) const;

 private:
  ArchConfig cfg_;
};

// Stable per-pixel softmax over the channel dimension of {C,H,W} logits.
ProbMap softmax(const Tensor& logits);

// dL/dlogits from dL/dprobs through the softmax Jacobian.
Tensor softmax_backward(const ProbMap& probs, const Tensor& dprobs);

// Per-pixel arg-max; ties resolve to the lower class index.
LabelMask argmax_mask(const ProbMap& probs);

// ---------------------------------------------------------------------------
// checkpoints: named-tensor archive + descriptor + seed + step
// ---------------------------------------------------------------------------

struct Checkpoint {
  ArchConfig arch;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::map<std::string, Tensor> blobs;
  std::string extra_json = "{}";  // free-form run metadata (stats, recipe, ...)
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mpnn::net
