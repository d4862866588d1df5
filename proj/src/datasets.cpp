#include "mpnn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mpnn/netpbm.hpp"
#include "mpnn/rng.hpp"

namespace fs = std::filesystem;

namespace mpnn::data {

LabelSelector LabelSelector::parse(const std::string& spec) {
  if (spec == "majority-vote") return majority_vote();
  if (spec == "clean") return clean();
  if (spec.rfind("rater", 0) == 0 && spec.size() > 5) {
    try {
      int k = std::stoi(spec.substr(5));
      MPNN_CHECK_AS(ConfigError, k >= 1, "rater index must be >= 1: ", spec);
      return rater_k(k);
    } catch (const std::invalid_argument&) {
    }
  }
  throw ConfigError("unknown label selector '" + spec +
                    "' (expected raterK | majority-vote | clean)");
}

std::string LabelSelector::str() const {
  switch (kind) {
    case Kind::Rater:
      return "rater" + std::to_string(rater);
    case Kind::MajorityVote:
      return "majority-vote";
    case Kind::Clean:
      return "clean";
  }
  return "?";
}

namespace {

constexpr const char* kImageSuffix = "_image.ppm";

void check_label_values(const LabelMask& m, const std::string& what) {
  for (std::uint8_t v : m.v) {
    MPNN_CHECK(v < kNumClasses, what, ": mask value ", int(v), " outside {0,1,2}");
  }
}

LabelMask load_mask_for(const fs::path& dir, const std::string& stem,
                        const std::string& id, const LabelSelector& sel) {
  auto mask_path = [&](const std::string& tag) { return dir / (stem + "_" + tag + ".pgm"); };
  switch (sel.kind) {
    case LabelSelector::Kind::Rater: {
      const fs::path p = mask_path("rater" + std::to_string(sel.rater));
      MPNN_CHECK(fs::exists(p), "missing mask for sample '", id, "': ", p.string());
      return netpbm::read_pgm(p);
    }
    case LabelSelector::Kind::Clean: {
      const fs::path p = mask_path("clean");
      MPNN_CHECK(fs::exists(p), "missing clean mask for sample '", id, "': ", p.string());
      return netpbm::read_pgm(p);
    }
    case LabelSelector::Kind::MajorityVote: {
      std::vector<LabelMask> masks;
      for (int k = 1;; ++k) {
        const fs::path p = mask_path("rater" + std::to_string(k));
        if (!fs::exists(p)) break;
        masks.push_back(netpbm::read_pgm(p));
      }
      MPNN_CHECK(!masks.empty(), "missing rater masks for sample '", id, "'");
      for (const auto& m : masks) check_label_values(m, id);
      return majority_vote(masks);
    }
  }
  throw Error("unreachable");
}

}  // namespace

RawDataset load_split(const fs::path& root, const std::vector<std::string>& sources,
                      const LabelSelector& selector) {
  MPNN_CHECK(fs::is_directory(root), "dataset root is not a directory: ", root.string());

  std::vector<std::string> dirs = sources;
  if (dirs.empty()) {
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory()) dirs.push_back(e.path().filename().string());
    }
    std::sort(dirs.begin(), dirs.end());
  }

  RawDataset ds;
  for (const std::string& src : dirs) {
    const fs::path dir = root / src;
    MPNN_CHECK(fs::is_directory(dir), "missing dataset source directory: ", dir.string());
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (name.size() > std::string(kImageSuffix).size() &&
          name.ends_with(kImageSuffix)) {
        stems.push_back(name.substr(0, name.size() - std::string(kImageSuffix).size()));
      }
    }
    std::sort(stems.begin(), stems.end());
    for (const std::string& stem : stems) {
      RawSample s;
      s.id = src + "/" + stem;
      s.image = netpbm::read_ppm(dir / (stem + kImageSuffix));
      s.label = load_mask_for(dir, stem, s.id, selector);
      check_label_values(s.label, s.id);
      MPNN_CHECK(s.label.h == s.image.h && s.label.w == s.image.w,
                 s.id, ": image ", s.image.h, "x", s.image.w, " vs mask ",
                 s.label.h, "x", s.label.w);
      ds.samples.push_back(std::move(s));
    }
  }
  MPNN_CHECK(!ds.samples.empty(), "no samples found under ", root.string());
  return ds;
}

LabelMask majority_vote(const std::vector<LabelMask>& masks) {
  MPNN_CHECK(!masks.empty(), "majority_vote: need at least one mask");
  const LabelMask& first = masks.front();
  for (const auto& m : masks) {
    MPNN_CHECK(m.same_shape(first), "majority_vote: shape mismatch ", m.h, "x", m.w,
               " vs ", first.h, "x", first.w);
  }
  LabelMask out(first.h, first.w);
  const std::size_t n = first.v.size();
  for (std::size_t i = 0; i < n; ++i) {
    int counts[kNumClasses] = {0, 0, 0};
    for (const auto& m : masks) counts[m.v[i]]++;
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c) {
      if (counts[c] > counts[best]) best = c;  // ties keep the lower index
    }
    out.v[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

LabelMask resize_mask(const LabelMask& mask, int target) {
  MPNN_CHECK(target > 0, "resize_mask: bad target ", target);
  if (mask.h == target && mask.w == target) return mask;
  LabelMask out(target, target);
  const double sy = static_cast<double>(mask.h) / target;
  const double sx = static_cast<double>(mask.w) / target;
  for (int y = 0; y < target; ++y) {
    int iy = static_cast<int>((y + 0.5) * sy);
    iy = std::min(iy, mask.h - 1);
    for (int x = 0; x < target; ++x) {
      int ix = static_cast<int>((x + 0.5) * sx);
      ix = std::min(ix, mask.w - 1);
      out.at(y, x) = mask.at(iy, ix);
    }
  }
  return out;
}

Tensor resize_bilinear(const RawImage& image, int target) {
  MPNN_CHECK(image.h > 0 && image.w > 0, "resize_bilinear: empty image");
  MPNN_CHECK(target > 0, "resize_bilinear: bad target ", target);
  Tensor out({3, target, target});
  const double sy = static_cast<double>(image.h) / target;
  const double sx = static_cast<double>(image.w) / target;
  double* o = out.data();
  for (int y = 0; y < target; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::max(0.0, std::min(fy, static_cast<double>(image.h - 1)));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::max(0.0, std::min(fx, static_cast<double>(image.w - 1)));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v00 = image.at(y0, x0, c);
        const double v01 = image.at(y0, x1, c);
        const double v10 = image.at(y1, x0, c);
        const double v11 = image.at(y1, x1, c);
        const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                         wy * ((1 - wx) * v10 + wx * v11);
        o[(static_cast<std::size_t>(c) * target + y) * target + x] = v;
      }
    }
  }
  return out;
}

ChannelStats compute_channel_stats(const RawDataset& ds, int target) {
  MPNN_CHECK(!ds.samples.empty(), "compute_channel_stats: empty dataset");
  std::array<double, 3> sum{}, sumsq{};
  std::int64_t count = 0;
  for (const auto& s : ds.samples) {
    const Tensor img = resize_bilinear(s.image, target);
    const std::int64_t hw = static_cast<std::int64_t>(target) * target;
    const double* p = img.data();
    for (int c = 0; c < 3; ++c) {
      for (std::int64_t i = 0; i < hw; ++i) {
        const double v = p[c * hw + i];
        sum[c] += v;
        sumsq[c] += v * v;
      }
    }
    count += hw;
  }
  ChannelStats st;
  for (int c = 0; c < 3; ++c) {
    st.mean[c] = sum[c] / count;
    const double var = sumsq[c] / count - st.mean[c] * st.mean[c];
    st.stdev[c] = std::sqrt(std::max(var, 0.0));
    MPNN_CHECK(st.stdev[c] > 1e-12, "channel ", c,
               " has zero standard deviation; degenerate data");
  }
  return st;
}

Tensor preprocess_image(const RawImage& image, int target, const ChannelStats& stats) {
  for (int c = 0; c < 3; ++c) {
    MPNN_CHECK(stats.stdev[c] > 1e-12, "channel ", c, " has zero standard deviation");
  }
  Tensor img = resize_bilinear(image, target);
  const std::int64_t hw = static_cast<std::int64_t>(target) * target;
  double* p = img.data();
  for (int c = 0; c < 3; ++c) {
    const double mu = stats.mean[c];
    const double inv = 1.0 / stats.stdev[c];
    for (std::int64_t i = 0; i < hw; ++i) {
      p[c * hw + i] = (p[c * hw + i] - mu) * inv;
    }
  }
  MPNN_CHECK(img.all_finite(), "preprocess produced non-finite values");
  return img;
}

Dataset preprocess_dataset(const RawDataset& ds, int target, const ChannelStats& stats) {
  Dataset out;
  out.samples.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    ImageSample ps;
    ps.id = s.id;
    ps.image = preprocess_image(s.image, target, stats);
    ps.label = resize_mask(s.label, target);
    out.samples.push_back(std::move(ps));
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

namespace {

// smooth periodic field over the boundary angle, low-order harmonics only
struct AngularField {
  std::array<double, 4> a{}, b{};

  static AngularField sample(rng::Prng& prng, double amplitude) {
    AngularField f;
    // decay higher harmonics so the perturbed contour stays smooth
    const double scale[4] = {1.0, 0.8, 0.5, 0.3};
    for (int o = 0; o < 4; ++o) {
      f.a[o] = amplitude * scale[o] * prng.gaussian();
      f.b[o] = amplitude * scale[o] * prng.gaussian();
    }
    return f;
  }

  double eval(double theta) const {
    double v = 0.0;
    for (int o = 0; o < 4; ++o) {
      v += a[o] * std::cos(o * theta) + b[o] * std::sin(o * theta);
    }
    return v;
  }
};

struct Ellipse {
  double cy, cx;      // center
  double ry, rx;      // semi-axes
  double rot;         // orientation

  // normalized radius: 1 on the contour, <1 inside
  double norm(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double c = std::cos(rot), s = std::sin(rot);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return std::sqrt((u / rx) * (u / rx) + (v / ry) * (v / ry));
  }

  double angle(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double c = std::cos(rot), s = std::sin(rot);
    return std::atan2(-s * dx + c * dy, c * dx + s * dy);
  }
};

double smoothstep(double t) {
  t = std::max(0.0, std::min(1.0, t));
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

SynthPair synth_generate(std::uint64_t seed, const SynthParams& params) {
  MPNN_CHECK(params.count > 0, "synth_generate: count must be positive");
  MPNN_CHECK(params.side >= 32, "synth_generate: side must be >= 32");
  MPNN_CHECK(params.boundary_noise >= 0.0 && params.boundary_noise <= 1.0,
             "synth_generate: boundary_noise must be in [0,1]");

  const int side = params.side;
  SynthPair pair;
  pair.noisy.samples.reserve(params.count);
  pair.clean.samples.reserve(params.count);

  int id_width = 1;
  for (int n = params.count - 1; n >= 10; n /= 10) ++id_width;

  for (int i = 0; i < params.count; ++i) {
    rng::Prng prng(rng::mix(seed, static_cast<std::uint64_t>(i)));

    Ellipse disc;
    disc.cy = side * prng.uniform(0.42, 0.58);
    disc.cx = side * prng.uniform(0.42, 0.58);
    disc.ry = side * prng.uniform(0.20, 0.30);
    disc.rx = side * prng.uniform(0.20, 0.30);
    disc.rot = prng.uniform(0.0, 3.14159265358979323846);

    Ellipse cup = disc;
    const double cup_scale = prng.uniform(0.45, 0.62);
    cup.ry *= cup_scale;
    cup.rx *= cup_scale;

    // shading / texture parameters
    const double edge_soft = prng.uniform(0.05, 0.09);  // relative edge width
    std::array<double, 3> base{}, disc_gain{}, cup_gain{};
    for (int c = 0; c < 3; ++c) {
      base[c] = prng.uniform(40.0, 80.0);
      disc_gain[c] = prng.uniform(55.0, 85.0);
      cup_gain[c] = prng.uniform(35.0, 60.0);
    }
    // low-frequency background texture: a per-image fingerprint
    struct Wave {
      double fy, fx, phase, amp;
    };
    std::array<Wave, 4> waves;
    for (auto& wv : waves) {
      wv.fy = prng.uniform(-0.12, 0.12);
      wv.fx = prng.uniform(-0.12, 0.12);
      wv.phase = prng.uniform(0.0, 6.28318530717958647692);
      wv.amp = prng.uniform(4.0, 11.0);
    }

    RawSample clean_s;
    clean_s.id = [&] {
      std::string num = std::to_string(i);
      while (static_cast<int>(num.size()) < id_width) num.insert(num.begin(), '0');
      return "synth" + num;
    }();
    clean_s.image = RawImage(side, side);
    clean_s.label = LabelMask(side, side);

    // boundary perturbations for the noisy annotation
    const double amp = 0.16 * params.boundary_noise;
    const AngularField disc_field = AngularField::sample(prng, amp);
    const AngularField cup_field = AngularField::sample(prng, amp);

    LabelMask noisy_label(side, side);

    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const double rd = disc.norm(y, x);
        const double rc = cup.norm(y, x);

        // image intensity: smooth background + texture + structure shading
        double tex = 0.0;
        for (const auto& wv : waves) {
          tex += wv.amp * std::sin(6.28318530717958647692 * (wv.fy * y + wv.fx * x) + wv.phase);
        }
        const double disc_shade = smoothstep((1.0 - rd) / edge_soft + 0.5);
        const double cup_shade = smoothstep((1.0 - rc) / edge_soft + 0.5);
        for (int c = 0; c < 3; ++c) {
          double v = base[c] + tex + disc_gain[c] * disc_shade + cup_gain[c] * cup_shade;
          v = std::max(0.0, std::min(255.0, v));
          clean_s.image.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
        }

        // clean label: cup ⊆ disc holds by construction (same center/rot,
        // strictly smaller semi-axes)
        std::uint8_t cl = 0;
        if (rc <= 1.0) {
          cl = 2;
        } else if (rd <= 1.0) {
          cl = 1;
        }
        clean_s.label.at(y, x) = cl;

        // noisy label: radially perturbed contours
        std::uint8_t nl = 0;
        if (params.boundary_noise > 0.0) {
          const double rd_lim = 1.0 + disc_field.eval(disc.angle(y, x));
          const double rc_lim = 1.0 + cup_field.eval(cup.angle(y, x));
          if (rc <= rc_lim) {
            nl = 2;
          } else if (rd <= rd_lim) {
            nl = 1;
          }
        } else {
          nl = cl;
        }
        noisy_label.at(y, x) = nl;
      }
    }

    RawSample noisy_s;
    noisy_s.id = clean_s.id;
    noisy_s.image = clean_s.image;
    noisy_s.label = std::move(noisy_label);

    pair.clean.samples.push_back(std::move(clean_s));
    pair.noisy.samples.push_back(std::move(noisy_s));
  }
  return pair;
}

void write_synth_split(const fs::path& dir, const SynthPair& pair) {
  fs::create_directories(dir);
  MPNN_CHECK(pair.noisy.size() == pair.clean.size(), "synth pair size mismatch");
  for (std::size_t i = 0; i < pair.noisy.size(); ++i) {
    const RawSample& n = pair.noisy.samples[i];
    const RawSample& c = pair.clean.samples[i];
    MPNN_CHECK(n.id == c.id, "synth pair id mismatch at index ", i);
    netpbm::write_ppm(dir / (n.id + "_image.ppm"), n.image);
    netpbm::write_pgm(dir / (n.id + "_rater1.pgm"), n.label);
    netpbm::write_pgm(dir / (c.id + "_clean.pgm"), c.label);
  }
}

}  // namespace mpnn::data
