#include "mpnn/mpggd.hpp"

#include <fstream>

#include <json.hpp>

#include "mpnn/evaluate.hpp"
#include "mpnn/netpbm.hpp"

namespace fs = std::filesystem;

namespace mpnn::mpggd {

using json = nlohmann::json;

double dsc_m(const LabelMask& pred, const LabelMask& truth) {
  return metrics::dsc_m(pred, truth);
}

ThresholdResult train_to_threshold(const Dataset& dataset, const net::Network& network,
                                   const train::Recipe& recipe, std::uint64_t seed,
                                   double phi, int max_epochs) {
  MPNN_CHECK_AS(ConfigError, phi > 0.0 && phi < 1.0, "train_to_threshold: phi must be in (0,1)");
  MPNN_CHECK_AS(ConfigError, max_epochs >= 1, "train_to_threshold: max_epochs must be >= 1");

  train::Recipe member_recipe = recipe;
  member_recipe.epochs = max_epochs;

  double best = -1.0;
  ThresholdResult result;
  bool reached = false;

  auto epoch_end = [&](int epoch, const train::TrainState& state,
                       const train::StepStats&) {
    double sum = 0.0;
    for (const auto& s : dataset.samples) {
      sum += dsc_m(network.predict_mask(state.student, s.image), s.label);
    }
    const double mean = sum / static_cast<double>(dataset.size());
    best = std::max(best, mean);
    if (mean >= phi) {
      result.params = state.student;
      result.info = {seed, epoch, mean};
      reached = true;
      return true;
    }
    return false;
  };

  train::train_baseline(dataset, network, member_recipe, seed, nullptr, epoch_end);
  if (!reached) {
    throw ThresholdError("DSC_m threshold " + std::to_string(phi) +
                             " not reached within " + std::to_string(max_epochs) +
                             " epochs; best " + std::to_string(best),
                         best, max_epochs);
  }
  return result;
}

PseudoLabelSet generate_pseudo_labels(const Dataset& dataset,
                                      const net::Network& network,
                                      const train::Recipe& recipe, int k, double phi,
                                      int max_epochs, std::uint64_t base_seed) {
  MPNN_CHECK_AS(ConfigError, k >= 2, "generate_pseudo_labels: K must be >= 2");
  PseudoLabelSet ps;
  ps.k = k;
  ps.phi = phi;
  for (const auto& s : dataset.samples) {
    ps.masks.emplace(s.id, std::vector<LabelMask>());
  }
  for (int member = 0; member < k; ++member) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(member);
    ThresholdResult tr = train_to_threshold(dataset, network, recipe, seed, phi,
                                            max_epochs);
    ps.seeds.push_back(seed);
    ps.members.push_back(tr.info);
    for (const auto& s : dataset.samples) {
      ps.masks.at(s.id).push_back(network.predict_mask(tr.params, s.image));
    }
  }
  return ps;
}

PixelPartition partition_from_masks(const std::vector<LabelMask>& pseudo) {
  MPNN_CHECK(!pseudo.empty(), "partition: no pseudo-labels");
  const LabelMask& first = pseudo.front();
  for (const auto& m : pseudo) {
    MPNN_CHECK(m.same_shape(first), "partition: pseudo-label shape mismatch");
  }
  PixelPartition part(first.h, first.w);
  const std::size_t n = first.v.size();
  for (std::size_t i = 0; i < n; ++i) {
    bool agree = true;
    const std::uint8_t ref = first.v[i];
    for (std::size_t m = 1; m < pseudo.size() && agree; ++m) {
      agree = pseudo[m].v[i] == ref;
    }
    part.clean[i] = agree ? 1 : 0;
  }
  part.recount();
  return part;
}

PixelPartition partition(const PseudoLabelSet& pseudo, const std::string& image_id) {
  auto it = pseudo.masks.find(image_id);
  MPNN_CHECK(it != pseudo.masks.end(), "partition: unknown image id '", image_id, "'");
  MPNN_CHECK(static_cast<int>(it->second.size()) == pseudo.k,
             "partition: expected ", pseudo.k, " masks for '", image_id, "', have ",
             it->second.size());
  return partition_from_masks(it->second);
}

std::string sanitize_id(const std::string& id) {
  std::string flat;
  for (char c : id) {
    if (c == '/' || c == '\\') {
      flat += "__";
    } else {
      flat += c;
    }
  }
  return flat;
}

void save_pseudo_store(const fs::path& dir, const PseudoLabelSet& ps) {
  fs::create_directories(dir);
  json manifest;
  manifest["k"] = ps.k;
  manifest["phi"] = ps.phi;
  manifest["seeds"] = ps.seeds;
  json members = json::array();
  for (const auto& m : ps.members) {
    members.push_back(json{{"seed", m.seed}, {"stop_epoch", m.stop_epoch}, {"dsc", m.dsc}});
  }
  manifest["members"] = members;
  json ids = json::array();
  for (const auto& [id, masks] : ps.masks) {
    ids.push_back(id);
    for (std::size_t m = 0; m < masks.size(); ++m) {
      netpbm::write_pgm(dir / (sanitize_id(id) + "_k" + std::to_string(m + 1) + ".pgm"),
                        masks[m]);
    }
  }
  manifest["ids"] = ids;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  MPNN_CHECK(out.good(), "cannot write pseudo manifest in ", dir.string());
  out << manifest.dump(2) << "\n";
}

PseudoLabelSet load_pseudo_store(const fs::path& dir) {
  const fs::path mf = dir / "manifest.json";
  MPNN_CHECK(fs::exists(mf), "missing pseudo-label store manifest: ", mf.string());
  std::ifstream in(mf);
  json manifest;
  in >> manifest;

  PseudoLabelSet ps;
  ps.k = manifest.at("k").get<int>();
  ps.phi = manifest.at("phi").get<double>();
  ps.seeds = manifest.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& mj : manifest.at("members")) {
    MemberInfo m;
    m.seed = mj.at("seed").get<std::uint64_t>();
    m.stop_epoch = mj.at("stop_epoch").get<int>();
    m.dsc = mj.at("dsc").get<double>();
    ps.members.push_back(m);
  }
  for (const auto& idj : manifest.at("ids")) {
    const std::string id = idj.get<std::string>();
    std::vector<LabelMask> masks;
    for (int m = 1; m <= ps.k; ++m) {
      const fs::path p = dir / (sanitize_id(id) + "_k" + std::to_string(m) + ".pgm");
      MPNN_CHECK(fs::exists(p), "missing pseudo-label raster ", p.string());
      masks.push_back(netpbm::read_pgm(p));
    }
    ps.masks.emplace(id, std::move(masks));
  }
  return ps;
}

void save_partition_store(const fs::path& dir,
                          const std::map<std::string, PixelPartition>& parts, int k,
                          double phi, const std::vector<std::uint64_t>& seeds) {
  fs::create_directories(dir);
  json manifest;
  manifest["k"] = k;
  manifest["phi"] = phi;
  manifest["seeds"] = seeds;
  std::int64_t total_cl = 0, total_no = 0;
  json per_image = json::array();
  for (const auto& [id, part] : parts) {
    LabelMask m(part.h, part.w);
    for (std::size_t i = 0; i < part.clean.size(); ++i) m.v[i] = part.clean[i] ? 1 : 0;
    netpbm::write_pgm(dir / (sanitize_id(id) + ".pgm"), m);
    per_image.push_back(json{{"id", id}, {"s_cl", part.s_cl}, {"s_no", part.s_no}});
    total_cl += part.s_cl;
    total_no += part.s_no;
  }
  manifest["images"] = per_image;
  manifest["total_s_cl"] = total_cl;
  manifest["total_s_no"] = total_no;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  MPNN_CHECK(out.good(), "cannot write partition manifest in ", dir.string());
  out << manifest.dump(2) << "\n";
}

std::map<std::string, PixelPartition> load_partition_store(const fs::path& dir) {
  const fs::path mf = dir / "manifest.json";
  MPNN_CHECK(fs::exists(mf), "missing partition store manifest: ", mf.string());
  std::ifstream in(mf);
  json manifest;
  in >> manifest;

  std::map<std::string, PixelPartition> parts;
  for (const auto& ij : manifest.at("images")) {
    const std::string id = ij.at("id").get<std::string>();
    const LabelMask m = netpbm::read_pgm(dir / (sanitize_id(id) + ".pgm"));
    PixelPartition part(m.h, m.w);
    for (std::size_t i = 0; i < m.v.size(); ++i) {
      MPNN_CHECK(m.v[i] <= 1, "partition raster for '", id, "' has value ", int(m.v[i]),
                 " outside {0,1}");
      part.clean[i] = m.v[i];
    }
    part.recount();
    MPNN_CHECK(part.s_cl == ij.at("s_cl").get<std::int64_t>() &&
                   part.s_no == ij.at("s_no").get<std::int64_t>(),
               "partition manifest counts disagree with raster for '", id, "'");
    parts.emplace(id, std::move(part));
  }
  return parts;
}

}  // namespace mpnn::mpggd
