#include "mpnn/model.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mpnn/rng.hpp"

namespace mpnn::net {

using json = nlohmann::json;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// ---------------------------------------------------------------------------
// ArchConfig
// ---------------------------------------------------------------------------

ArchConfig ArchConfig::preset(const std::string& name) {
  ArchConfig c;
  c.name = name;
  if (name == "micro") {
    c.stem_channels = 4;
    c.level_channels = {6};
  } else if (name == "tiny") {
    c.stem_channels = 12;
    c.level_channels = {24, 48};
  } else if (name == "base") {
    c.stem_channels = 32;
    c.level_channels = {64, 128, 256, 512};
  } else {
    throw ConfigError("unknown architecture preset '" + name + "'");
  }
  return c;
}

void ArchConfig::validate() const {
  MPNN_CHECK_AS(ConfigError, in_channels >= 1, "arch: in_channels must be >= 1");
  MPNN_CHECK_AS(ConfigError, num_classes >= 2, "arch: num_classes must be >= 2");
  MPNN_CHECK_AS(ConfigError, stem_channels >= 1, "arch: stem_channels must be >= 1");
  MPNN_CHECK_AS(ConfigError, !level_channels.empty(), "arch: need at least one level");
  for (int ch : level_channels) {
    MPNN_CHECK_AS(ConfigError, ch >= 1, "arch: level channel count must be >= 1");
  }
}

bool ParamSet::shape_compatible(const ParamSet& o) const {
  if (tensors.size() != o.tensors.size()) return false;
  auto it = tensors.begin();
  auto jt = o.tensors.begin();
  for (; it != tensors.end(); ++it, ++jt) {
    if (it->first != jt->first) return false;
    if (it->second.shape() != jt->second.shape()) return false;
  }
  return true;
}

bool ParamSet::equals(const ParamSet& o) const {
  if (tensors.size() != o.tensors.size()) return false;
  auto it = tensors.begin();
  auto jt = o.tensors.begin();
  for (; it != tensors.end(); ++it, ++jt) {
    if (it->first != jt->first || !it->second.equals(jt->second)) return false;
  }
  return true;
}

std::vector<ParamSpec> param_specs(const ArchConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  auto conv = [&](const std::string& name, int co, int ci, int k) {
    specs.push_back({name + ".w", {co, ci, k, k}});
    specs.push_back({name + ".b", {co}});
  };
  conv("stem", cfg.stem_channels, cfg.in_channels, 3);
  int prev = cfg.stem_channels;
  for (int l = 0; l < cfg.depth(); ++l) {
    const int ch = cfg.level_channels[l];
    conv("enc" + std::to_string(l + 1) + ".c1", ch, prev, 3);
    conv("enc" + std::to_string(l + 1) + ".c2", ch, ch, 3);
    prev = ch;
  }
  for (int l = cfg.depth(); l >= 1; --l) {
    const int ch = cfg.level_channels[l - 1];
    const int out = (l == 1) ? cfg.stem_channels : cfg.level_channels[l - 2];
    conv("dec" + std::to_string(l), out, ch, 3);
  }
  conv("head", cfg.num_classes, cfg.stem_channels, 1);
  return specs;
}

ParamSet init_network(const ArchConfig& cfg, std::uint64_t seed) {
  const auto specs = param_specs(cfg);
  rng::Prng prng(rng::mix(seed, 0x1417u));
  ParamSet ps;
  ps.seed = seed;
  for (const auto& spec : specs) {
    Tensor t(spec.shape);
    if (spec.name.ends_with(".w")) {
      // He-normal: fan_in = Ci * k * k
      std::int64_t fan_in = 1;
      for (std::size_t i = 1; i < spec.shape.size(); ++i) fan_in *= spec.shape[i];
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::int64_t i = 0; i < t.size(); ++i) t[i] = std_dev * prng.gaussian();
    }
    ps.tensors.emplace(spec.name, std::move(t));
  }
  return ps;
}

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

namespace {

struct Shape3 {
  int c, h, w;
};

Shape3 chw(const Tensor& t) {
  MPNN_CHECK(t.rank() == 3, "expected rank-3 tensor, got rank ", t.rank());
  return {t.dim(0), t.dim(1), t.dim(2)};
}

// patches layout: (Ci*k*k) x (Ho*Wo), row-major
void im2col(const Tensor& in, int k, int stride, int pad, int ho, int wo,
            std::vector<double>& patches) {
  const auto [ci, h, w] = chw(in);
  patches.assign(static_cast<std::size_t>(ci) * k * k * ho * wo, 0.0);
  const double* src = in.data();
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(c) * k + ky) * k + kx;
        double* dst = patches.data() + row * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const double* srow = src + (static_cast<std::size_t>(c) * h + iy) * w;
          double* drow = dst + static_cast<std::size_t>(oy) * wo;
          if (stride == 1) {
            const int x0 = std::max(0, pad - kx);
            const int x1 = std::min(wo, w + pad - kx);
            for (int ox = x0; ox < x1; ++ox) drow[ox] = srow[ox + kx - pad];
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < w) drow[ox] = srow[ix];
            }
          }
        }
      }
    }
  }
}

void col2im(const std::vector<double>& dpatches, int ci, int k, int stride, int pad,
            int ho, int wo, Tensor& din) {
  const auto [c_, h, w] = chw(din);
  MPNN_CHECK(c_ == ci, "col2im channel mismatch");
  double* dst = din.data();
  for (int c = 0; c < ci; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(c) * k + ky) * k + kx;
        const double* src = dpatches.data() + row * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          double* drow = dst + (static_cast<std::size_t>(c) * h + iy) * w;
          const double* srow = src + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

Tensor conv_forward(const Tensor& in, const Tensor& w, const Tensor& b, int stride,
                    int pad) {
  const auto [ci, h, wd] = chw(in);
  MPNN_CHECK(w.rank() == 4 && w.dim(1) == ci, "conv: weight/input channel mismatch (",
             w.dim(1), " vs ", ci, ")");
  const int co = w.dim(0);
  const int k = w.dim(2);
  const int ho = conv_out_dim(h, k, stride, pad);
  const int wo = conv_out_dim(wd, k, stride, pad);
  MPNN_CHECK(ho >= 1 && wo >= 1, "conv: input ", h, "x", wd, " too small for kernel");
  Tensor out({co, ho, wo});

  if (k == 1 && stride == 1) {
    CMapMat W(w.data(), co, ci);
    CMapMat X(in.data(), ci, static_cast<Eigen::Index>(h) * wd);
    MapMat O(out.data(), co, static_cast<Eigen::Index>(ho) * wo);
    O.noalias() = W * X;
  } else {
    std::vector<double> patches;
    im2col(in, k, stride, pad, ho, wo, patches);
    CMapMat W(w.data(), co, static_cast<Eigen::Index>(ci) * k * k);
    CMapMat P(patches.data(), static_cast<Eigen::Index>(ci) * k * k,
              static_cast<Eigen::Index>(ho) * wo);
    MapMat O(out.data(), co, static_cast<Eigen::Index>(ho) * wo);
    O.noalias() = W * P;
  }
  const std::int64_t hw = static_cast<std::int64_t>(ho) * wo;
  double* o = out.data();
  for (int c = 0; c < co; ++c) {
    const double bias = b[c];
    for (std::int64_t i = 0; i < hw; ++i) o[c * hw + i] += bias;
  }
  return out;
}

// din may be null when the input gradient is not needed (stem conv).
void conv_backward(const Tensor& in, const Tensor& w, int stride, int pad,
                   const Tensor& dout, Tensor& dw, Tensor& db, Tensor* din) {
  const auto [ci, h, wd] = chw(in);
  const int co = w.dim(0);
  const int k = w.dim(2);
  const auto [co_, ho, wo] = chw(dout);
  MPNN_CHECK(co_ == co, "conv_backward: channel mismatch");

  dw = Tensor(std::vector<int>(w.shape()));
  db = Tensor({co});
  const std::int64_t hw = static_cast<std::int64_t>(ho) * wo;
  const double* g = dout.data();
  for (int c = 0; c < co; ++c) {
    double s = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) s += g[c * hw + i];
    db[c] = s;
  }

  if (k == 1 && stride == 1) {
    CMapMat G(dout.data(), co, hw);
    CMapMat X(in.data(), ci, hw);
    MapMat DW(dw.data(), co, ci);
    DW.noalias() = G * X.transpose();
    if (din) {
      *din = Tensor({ci, h, wd});
      CMapMat W(w.data(), co, ci);
      MapMat DX(din->data(), ci, hw);
      DX.noalias() = W.transpose() * G;
    }
    return;
  }

  std::vector<double> patches;
  im2col(in, k, stride, pad, ho, wo, patches);
  const Eigen::Index kk = static_cast<Eigen::Index>(ci) * k * k;
  CMapMat G(dout.data(), co, hw);
  CMapMat P(patches.data(), kk, hw);
  MapMat DW(dw.data(), co, kk);
  DW.noalias() = G * P.transpose();

  if (din) {
    std::vector<double> dpatches(static_cast<std::size_t>(kk) * hw);
    CMapMat W(w.data(), co, kk);
    MapMat DP(dpatches.data(), kk, hw);
    DP.noalias() = W.transpose() * G;
    *din = Tensor({ci, h, wd});
    col2im(dpatches, ci, k, stride, pad, ho, wo, *din);
  }
}

Tensor relu(const Tensor& x) {
  Tensor y(std::vector<int>(x.shape()));
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& preact, const Tensor& dout) {
  Tensor g(std::vector<int>(dout.shape()));
  for (std::int64_t i = 0; i < dout.size(); ++i) g[i] = preact[i] > 0.0 ? dout[i] : 0.0;
  return g;
}

Tensor upsample2(const Tensor& x) {
  const auto [c, h, w] = chw(x);
  Tensor y({c, h * 2, w * 2});
  const double* src = x.data();
  double* dst = y.data();
  for (int cc = 0; cc < c; ++cc) {
    for (int yy = 0; yy < 2 * h; ++yy) {
      const double* srow = src + (static_cast<std::size_t>(cc) * h + yy / 2) * w;
      double* drow = dst + (static_cast<std::size_t>(cc) * 2 * h + yy) * 2 * w;
      for (int xx = 0; xx < 2 * w; ++xx) drow[xx] = srow[xx / 2];
    }
  }
  return y;
}

Tensor upsample2_backward(const Tensor& dout) {
  const auto [c, h2, w2] = chw(dout);
  const int h = h2 / 2, w = w2 / 2;
  Tensor g({c, h, w});
  const double* src = dout.data();
  double* dst = g.data();
  for (int cc = 0; cc < c; ++cc) {
    for (int yy = 0; yy < h2; ++yy) {
      const double* srow = src + (static_cast<std::size_t>(cc) * h2 + yy) * w2;
      double* drow = dst + (static_cast<std::size_t>(cc) * h + yy / 2) * w;
      for (int xx = 0; xx < w2; ++xx) drow[xx / 2] += srow[xx];
    }
  }
  return g;
}

void add_inplace(Tensor& a, const Tensor& b) {
  MPNN_CHECK(a.same_shape(b), "add: shape mismatch");
  double* pa = a.data();
  const double* pb = b.data();
  for (std::int64_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

const Tensor& get(const ParamSet& ps, const std::string& name) {
  auto it = ps.tensors.find(name);
  MPNN_CHECK(it != ps.tensors.end(), "missing parameter tensor '", name, "'");
  return it->second;
}

}  // namespace

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Network::Network(ArchConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

Tensor Network::forward_logits(const ParamSet& params, const Tensor& image,
                               Trace* trace) const {
  const auto [c, h, w] = chw(image);
  MPNN_CHECK(c == cfg_.in_channels, "forward: expected ", cfg_.in_channels,
             " input channels, got ", c);
  const int div = 1 << cfg_.depth();
  MPNN_CHECK(h % div == 0 && w % div == 0 && h >= div && w >= div,
             "forward: spatial size ", h, "x", w, " not divisible by 2^depth=", div);
  MPNN_CHECK(image.all_finite(), "forward: non-finite input");

  const int L = cfg_.depth();
  if (trace) {
    trace->enc_a.resize(L);
    trace->enc_b.resize(L);
    trace->dec.resize(L);
  }

  auto conv_relu = [&](const Tensor& in, const std::string& name, int stride,
                       ConvCache* cache) {
    Tensor pre = conv_forward(in, get(params, name + ".w"), get(params, name + ".b"),
                              stride, 1);
    Tensor act = relu(pre);
    if (cache) {
      cache->input = in;
      cache->preact = std::move(pre);
    }
    return act;
  };

  std::vector<Tensor> enc_act(L + 1);
  enc_act[0] = conv_relu(image, "stem", 1, trace ? &trace->stem : nullptr);
  for (int l = 1; l <= L; ++l) {
    const std::string base = "enc" + std::to_string(l);
    Tensor q = conv_relu(enc_act[l - 1], base + ".c1", 2,
                         trace ? &trace->enc_a[l - 1] : nullptr);
    enc_act[l] = conv_relu(q, base + ".c2", 1, trace ? &trace->enc_b[l - 1] : nullptr);
  }

  Tensor d = enc_act[L];
  for (int l = L; l >= 1; --l) {
    Tensor u = upsample2(d);
    Tensor r = conv_relu(u, "dec" + std::to_string(l), 1,
                         trace ? &trace->dec[l - 1] : nullptr);
    add_inplace(r, enc_act[l - 1]);
    d = std::move(r);
  }

  if (trace) trace->head_input = d;
  Tensor logits = conv_forward(d, get(params, "head.w"), get(params, "head.b"), 1, 0);
  if (trace) trace->logits = logits;
  return logits;
}

ProbMap Network::forward(const ParamSet& params, const Tensor& image) const {
  return softmax(forward_logits(params, image));
}

ParamSet Network::backward(const ParamSet& params, const Trace& trace,
                           const Tensor& dlogits) const {
  const int L = cfg_.depth();
  ParamSet grads;
  grads.seed = params.seed;

  auto put = [&](const std::string& name, Tensor&& t) {
    grads.tensors.emplace(name, std::move(t));
  };

  // head (1x1 conv)
  Tensor dw, db, g;
  conv_backward(trace.head_input, get(params, "head.w"), 1, 0, dlogits, dw, db, &g);
  put("head.w", std::move(dw));
  put("head.b", std::move(db));

  // decoder chain; g currently holds dL/d(d_0)
  std::vector<Tensor> g_enc(L + 1);  // gradient w.r.t. encoder activations
  for (int l = 1; l <= L; ++l) {
    g_enc[l - 1] = g;  // skip branch
    Tensor gr = relu_backward(trace.dec[l - 1].preact, g);
    Tensor gu;
    conv_backward(trace.dec[l - 1].input, get(params, "dec" + std::to_string(l) + ".w"),
                  1, 1, gr, dw, db, &gu);
    put("dec" + std::to_string(l) + ".w", std::move(dw));
    put("dec" + std::to_string(l) + ".b", std::move(db));
    g = upsample2_backward(gu);
  }
  g_enc[L] = std::move(g);

  // encoder chain, deepest first
  for (int l = L; l >= 1; --l) {
    const std::string base = "enc" + std::to_string(l);
    Tensor g2 = relu_backward(trace.enc_b[l - 1].preact, g_enc[l]);
    Tensor gq;
    conv_backward(trace.enc_b[l - 1].input, get(params, base + ".c2.w"), 1, 1, g2, dw,
                  db, &gq);
    put(base + ".c2.w", std::move(dw));
    put(base + ".c2.b", std::move(db));

    Tensor g1 = relu_backward(trace.enc_a[l - 1].preact, gq);
    Tensor gp;
    conv_backward(trace.enc_a[l - 1].input, get(params, base + ".c1.w"), 2, 1, g1, dw,
                  db, &gp);
    put(base + ".c1.w", std::move(dw));
    put(base + ".c1.b", std::move(db));
    add_inplace(g_enc[l - 1], gp);
  }

  Tensor gs = relu_backward(trace.stem.preact, g_enc[0]);
  conv_backward(trace.stem.input, get(params, "stem.w"), 1, 1, gs, dw, db, nullptr);
  put("stem.w", std::move(dw));
  put("stem.b", std::move(db));
  return grads;
}

LabelMask Network::predict_mask(const ParamSet& params, const Tensor& image) const {
  return argmax_mask(forward(params, image));
}

ProbMap softmax(const Tensor& logits) {
  const auto [c, h, w] = chw(logits);
  ProbMap probs(std::vector<int>(logits.shape()));
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const double* z = logits.data();
  double* p = probs.data();
  for (std::int64_t i = 0; i < hw; ++i) {
    double mx = z[i];
    for (int cc = 1; cc < c; ++cc) mx = std::max(mx, z[cc * hw + i]);
    double sum = 0.0;
    for (int cc = 0; cc < c; ++cc) {
      const double e = std::exp(z[cc * hw + i] - mx);
      p[cc * hw + i] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int cc = 0; cc < c; ++cc) p[cc * hw + i] *= inv;
  }
  return probs;
}

Tensor softmax_backward(const ProbMap& probs, const Tensor& dprobs) {
  MPNN_CHECK(probs.same_shape(dprobs), "softmax_backward: shape mismatch");
  const auto [c, h, w] = chw(probs);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  Tensor dlogits(std::vector<int>(probs.shape()));
  const double* p = probs.data();
  const double* gp = dprobs.data();
  double* gz = dlogits.data();
  for (std::int64_t i = 0; i < hw; ++i) {
    double dot = 0.0;
    for (int cc = 0; cc < c; ++cc) dot += gp[cc * hw + i] * p[cc * hw + i];
    for (int cc = 0; cc < c; ++cc) {
      gz[cc * hw + i] = p[cc * hw + i] * (gp[cc * hw + i] - dot);
    }
  }
  return dlogits;
}

LabelMask argmax_mask(const ProbMap& probs) {
  const auto [c, h, w] = chw(probs);
  LabelMask mask(h, w);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const double* p = probs.data();
  for (std::int64_t i = 0; i < hw; ++i) {
    int best = 0;
    double bv = p[i];
    for (int cc = 1; cc < c; ++cc) {
      if (p[cc * hw + i] > bv) {  // strict: ties keep the lower index
        bv = p[cc * hw + i];
        best = cc;
      }
    }
    mask.v[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'M', 'P', 'N', 'N', 'C', 'K', 'P', '1'};

json arch_to_json(const ArchConfig& a) {
  return json{{"name", a.name},
              {"in_channels", a.in_channels},
              {"num_classes", a.num_classes},
              {"stem_channels", a.stem_channels},
              {"level_channels", a.level_channels}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.name = j.at("name").get<std::string>();
  a.in_channels = j.at("in_channels").get<int>();
  a.num_classes = j.at("num_classes").get<int>();
  a.stem_channels = j.at("stem_channels").get<int>();
  a.level_channels = j.at("level_channels").get<std::vector<int>>();
  a.validate();
  return a;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["arch"] = arch_to_json(ckpt.arch);
  header["seed"] = ckpt.seed;
  header["step"] = ckpt.step;
  header["extra"] = json::parse(ckpt.extra_json);
  json tensors = json::array();
  for (const auto& [name, t] : ckpt.blobs) {
    tensors.push_back(json{{"name", name}, {"shape", t.shape()}});
  }
  header["tensors"] = tensors;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  MPNN_CHECK(out.good(), "cannot write checkpoint ", path.string());
  out.write(kCkptMagic, sizeof(kCkptMagic));
  const std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : ckpt.blobs) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  MPNN_CHECK(out.good(), "checkpoint write failed: ", path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  MPNN_CHECK(in.good(), "cannot open checkpoint ", path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  MPNN_CHECK(in.gcount() == 8 && std::memcmp(magic, kCkptMagic, 8) == 0,
             path.string(), ": not a checkpoint file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  MPNN_CHECK(in.good(), path.string(), ": truncated header");
  const json header = json::parse(hs);

  Checkpoint ckpt;
  ckpt.arch = arch_from_json(header.at("arch"));
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.step = header.at("step").get<std::int64_t>();
  ckpt.extra_json = header.at("extra").dump();
  for (const auto& tj : header.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    Tensor t(tj.at("shape").get<std::vector<int>>());
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    MPNN_CHECK(in.gcount() == static_cast<std::streamsize>(t.size() * sizeof(double)),
               path.string(), ": truncated tensor '", name, "'");
    ckpt.blobs.emplace(name, std::move(t));
  }
  return ckpt;
}

}  // namespace mpnn::net
