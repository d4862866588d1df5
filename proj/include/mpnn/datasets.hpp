#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mpnn/types.hpp"

namespace mpnn::data {

// Which mask file backs a sample's label.
//   rater k       -> <id>_rater<k>.pgm
//   majority-vote -> per-pixel plurality over every rater file present
//   clean         -> <id>_clean.pgm (synthetic ground truth)
struct LabelSelector {
  enum class Kind { Rater, MajorityVote, Clean };
  Kind kind = Kind::Rater;
  int rater = 1;

  static LabelSelector rater_k(int k) { return {Kind::Rater, k}; }
  static LabelSelector majority_vote() { return {Kind::MajorityVote, 0}; }
  static LabelSelector clean() { return {Kind::Clean, 0}; }
  static LabelSelector parse(const std::string& spec);
  std::string str() const;
};

// Loads every `<root>/<source>/<id>_image.ppm` together with the selected
// mask. Sample ids are `<source>/<id>`, ordering is lexicographic by id.
// Empty `sources` means every subdirectory of root.
RawDataset load_split(const std::filesystem::path& root,
                      const std::vector<std::string>& sources,
                      const LabelSelector& selector);

// Per-pixel plurality vote; ties resolve to the lower class index.
LabelMask majority_vote(const std::vector<LabelMask>& masks);

// Nearest-neighbor resize, keeps the label alphabet intact.
LabelMask resize_mask(const LabelMask& mask, int target);

// Bilinear resize to target x target, output {3,H,W} in [0,255].
Tensor resize_bilinear(const RawImage& image, int target);

// Dataset-level channel statistics, computed over the resized training split
// and frozen for the lifetime of a run.
struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stdev{};
};

ChannelStats compute_channel_stats(const RawDataset& ds, int target);

// resize + per-channel standardization with frozen statistics
Tensor preprocess_image(const RawImage& image, int target, const ChannelStats& stats);

Dataset preprocess_dataset(const RawDataset& ds, int target, const ChannelStats& stats);

// Synthetic concentric-ellipse disc/cup data. `clean` masks are exact;
// `noisy` masks have their structure boundaries radially perturbed by a
// smooth angular field with amplitude proportional to boundary_noise.
// Images are identical between the two datasets.
struct SynthParams {
  int count = 0;
  int side = 64;
  double boundary_noise = 0.0;
};

struct SynthPair {
  RawDataset noisy;
  RawDataset clean;
};

SynthPair synth_generate(std::uint64_t seed, const SynthParams& params);

// Writes samples as <dir>/<id>_image.ppm, <id>_rater1.pgm (noisy label) and
// <id>_clean.pgm. Ids must be flat (no source prefix).
void write_synth_split(const std::filesystem::path& dir, const SynthPair& pair);

}  // namespace mpnn::data
