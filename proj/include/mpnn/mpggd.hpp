#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mpnn/model.hpp"
#include "mpnn/trainer.hpp"
#include "mpnn/types.hpp"

namespace mpnn::mpggd {

// mean disc/cup Dice, the ensemble stopping metric
double dsc_m(const LabelMask& pred, const LabelMask& truth);

struct MemberInfo {
  std::uint64_t seed = 0;
  int stop_epoch = 0;   // epoch index at which the threshold was met
  double dsc = 0.0;     // training-set DSC_m achieved at the stop point
};

struct ThresholdResult {
  net::ParamSet params;
  MemberInfo info;
};

// Trains with the baseline recipe until the epoch-end training-set DSC_m
// reaches phi; the returned weights are the first ones meeting it. Throws
// ThresholdError (carrying the best DSC_m seen) if max_epochs runs out.
ThresholdResult train_to_threshold(const Dataset& dataset, const net::Network& network,
                                   const train::Recipe& recipe, std::uint64_t seed,
                                   double phi, int max_epochs);

// K pseudo-label masks per training image from K threshold-stopped networks.
struct PseudoLabelSet {
  int k = 0;
  double phi = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<MemberInfo> members;
  std::map<std::string, std::vector<LabelMask>> masks;  // id -> K masks
};

// Runs train_to_threshold K times with seeds base_seed .. base_seed+K-1 and
// predicts each member on the unperturbed preprocessed images. Any member
// missing the threshold fails the whole operation.
PseudoLabelSet generate_pseudo_labels(const Dataset& dataset,
                                      const net::Network& network,
                                      const train::Recipe& recipe, int k, double phi,
                                      int max_epochs, std::uint64_t base_seed);

// Pixel i is clean iff all K pseudo-labels agree at i.
PixelPartition partition_from_masks(const std::vector<LabelMask>& pseudo);
PixelPartition partition(const PseudoLabelSet& pseudo, const std::string& image_id);

// ---------------------------------------------------------------------------
// on-disk stores
//   pseudo:    <dir>/<id>_k<k>.pgm            + manifest.json
//   partition: <dir>/<id>.pgm (0 noisy/1 clean) + manifest.json
// ids with '/' are flattened with "__" in file names.
// ---------------------------------------------------------------------------

std::string sanitize_id(const std::string& id);

void save_pseudo_store(const std::filesystem::path& dir, const PseudoLabelSet& ps);
PseudoLabelSet load_pseudo_store(const std::filesystem::path& dir);

void save_partition_store(const std::filesystem::path& dir,
                          const std::map<std::string, PixelPartition>& parts, int k,
                          double phi, const std::vector<std::uint64_t>& seeds);
std::map<std::string, PixelPartition> load_partition_store(
    const std::filesystem::path& dir);

}  // namespace mpnn::mpggd
