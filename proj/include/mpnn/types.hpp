#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "mpnn/common.hpp"
#include "mpnn/tensor.hpp"

namespace mpnn {

inline constexpr int kNumClasses = 3;  // 0 background, 1 disc, 2 cup

// Per-pixel class map, values in {0,1,2}. Also reused for any single-channel
// raster (partition masks store 0 = noisy, 1 = clean).
struct LabelMask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> v;

  LabelMask() = default;
  LabelMask(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {}

  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  bool same_shape(const LabelMask& o) const { return h == o.h && w == o.w; }
  bool operator==(const LabelMask& o) const { return h == o.h && w == o.w && v == o.v; }
};

// 8-bit RGB image, HWC interleaved.
struct RawImage {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> rgb;

  RawImage() = default;
  RawImage(int h_, int w_) : h(h_), w(w_), rgb(static_cast<std::size_t>(h_) * w_ * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
  bool operator==(const RawImage& o) const { return h == o.h && w == o.w && rgb == o.rgb; }
};

struct RawSample {
  std::string id;
  RawImage image;
  LabelMask label;
};

struct RawDataset {
  std::vector<RawSample> samples;
  std::size_t size() const { return samples.size(); }
};

// Preprocessed sample: standardized {3,H,W} image plus resized label.
struct ImageSample {
  std::string id;
  Tensor image;
  LabelMask label;
};

struct Dataset {
  std::vector<ImageSample> samples;
  std::size_t size() const { return samples.size(); }
};

// {C,H,W} per-pixel class probabilities; each pixel's C-vector sums to 1.
using ProbMap = Tensor;

// Consensus split of an image's pixels. clean[i] == 1 iff every pseudo-label
// assigns pixel i the same class.
struct PixelPartition {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> clean;
  std::int64_t s_cl = 0;
  std::int64_t s_no = 0;

  PixelPartition() = default;
  PixelPartition(int h_, int w_)
      : h(h_), w(w_), clean(static_cast<std::size_t>(h_) * w_, 0) {}

  static PixelPartition all_clean(int h, int w) {
    PixelPartition p(h, w);
    std::fill(p.clean.begin(), p.clean.end(), std::uint8_t{1});
    p.s_cl = static_cast<std::int64_t>(h) * w;
    p.s_no = 0;
    return p;
  }

  void recount() {
    s_cl = 0;
    for (std::uint8_t c : clean) s_cl += c ? 1 : 0;
    s_no = static_cast<std::int64_t>(clean.size()) - s_cl;
  }
};

}  // namespace mpnn
