#include "mpnn/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace mpnn::config {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& block,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    MPNN_CHECK_AS(ConfigError, ok, "unknown config key '", key, "' in block '", block,
                  "'");
  }
}

json merge(json base, const json& overlay) {
  if (!base.is_object() || !overlay.is_object()) return overlay;
  for (const auto& [key, value] : overlay.items()) {
    if (base.contains(key)) {
      base[key] = merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
  return base;
}

json load_layered(const fs::path& path, int depth) {
  MPNN_CHECK_AS(ConfigError, depth < 8, "config include chain too deep at ",
                path.string());
  std::ifstream in(path);
  MPNN_CHECK_AS(ConfigError, in.good(), "cannot open config ", path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  MPNN_CHECK_AS(ConfigError, j.is_object(), path.string(), ": config must be an object");
  if (j.contains("include")) {
    const fs::path base_path = path.parent_path() / j.at("include").get<std::string>();
    json base = load_layered(base_path, depth + 1);
    j.erase("include");
    j = merge(std::move(base), j);
  }
  return j;
}

net::ArchConfig arch_from(const json& j) {
  if (j.contains("preset")) {
    check_keys(j, "arch", {"preset"});
    return net::ArchConfig::preset(j.at("preset").get<std::string>());
  }
  check_keys(j, "arch",
             {"name", "in_channels", "num_classes", "stem_channels", "level_channels"});
  net::ArchConfig a;
  a.name = j.value("name", std::string("custom"));
  a.in_channels = j.value("in_channels", a.in_channels);
  a.num_classes = j.value("num_classes", a.num_classes);
  a.stem_channels = j.value("stem_channels", a.stem_channels);
  if (j.contains("level_channels"))
    a.level_channels = j.at("level_channels").get<std::vector<int>>();
  a.validate();
  return a;
}

json arch_to(const net::ArchConfig& a) {
  return json{{"name", a.name},
              {"in_channels", a.in_channels},
              {"num_classes", a.num_classes},
              {"stem_channels", a.stem_channels},
              {"level_channels", a.level_channels}};
}

RunConfig from_json(const json& j) {
  check_keys(j, "<root>",
             {"seed", "output_dir", "dataset", "mpggd", "noise_aware", "recipe", "eval",
              "arch"});
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset",
               {"kind", "root", "train_sources", "test_sources", "rater", "side",
                "synth_seed", "synth_train", "synth_test", "synth_side",
                "boundary_noise"});
    c.dataset.kind = d.value("kind", c.dataset.kind);
    MPNN_CHECK_AS(ConfigError, c.dataset.kind == "riga" || c.dataset.kind == "synth",
                  "dataset.kind must be riga or synth, got '", c.dataset.kind, "'");
    c.dataset.root = d.value("root", c.dataset.root);
    if (d.contains("train_sources"))
      c.dataset.train_sources = d.at("train_sources").get<std::vector<std::string>>();
    if (d.contains("test_sources"))
      c.dataset.test_sources = d.at("test_sources").get<std::vector<std::string>>();
    c.dataset.rater = d.value("rater", c.dataset.rater);
    c.dataset.side = d.value("side", c.dataset.side);
    c.dataset.synth_seed = d.value("synth_seed", c.dataset.synth_seed);
    c.dataset.synth_train = d.value("synth_train", c.dataset.synth_train);
    c.dataset.synth_test = d.value("synth_test", c.dataset.synth_test);
    c.dataset.synth_side = d.value("synth_side", c.dataset.synth_side);
    c.dataset.boundary_noise = d.value("boundary_noise", c.dataset.boundary_noise);
  }
  if (j.contains("mpggd")) {
    const json& m = j.at("mpggd");
    check_keys(m, "mpggd", {"k", "phi", "max_epochs", "base_seed"});
    c.mpggd.k = m.value("k", c.mpggd.k);
    c.mpggd.phi = m.value("phi", c.mpggd.phi);
    c.mpggd.max_epochs = m.value("max_epochs", c.mpggd.max_epochs);
    c.mpggd.base_seed = m.value("base_seed", c.mpggd.base_seed);
  }
  if (j.contains("noise_aware")) {
    const json& n = j.at("noise_aware");
    check_keys(n, "noise_aware", {"m", "sigma", "alpha", "w_max", "beta", "h0_frac"});
    c.noise.m = n.value("m", c.noise.m);
    c.noise.sigma = n.value("sigma", c.noise.sigma);
    c.noise.alpha = n.value("alpha", c.noise.alpha);
    c.noise.w_max = n.value("w_max", c.noise.w_max);
    c.noise.beta = n.value("beta", c.noise.beta);
    c.noise.h0_frac = n.value("h0_frac", c.noise.h0_frac);
  }
  if (j.contains("recipe")) {
    const json& r = j.at("recipe");
    check_keys(r, "recipe",
               {"lr0", "decay_every", "decay_factor", "epochs", "batch", "beta1",
                "beta2", "eps"});
    c.recipe.lr0 = r.value("lr0", c.recipe.lr0);
    c.recipe.decay_every = r.value("decay_every", c.recipe.decay_every);
    c.recipe.decay_factor = r.value("decay_factor", c.recipe.decay_factor);
    c.recipe.epochs = r.value("epochs", c.recipe.epochs);
    c.recipe.batch = r.value("batch", c.recipe.batch);
    c.recipe.beta1 = r.value("beta1", c.recipe.beta1);
    c.recipe.beta2 = r.value("beta2", c.recipe.beta2);
    c.recipe.eps = r.value("eps", c.recipe.eps);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval", {"target", "use_teacher"});
    c.eval.target = e.value("target", c.eval.target);
    c.eval.use_teacher = e.value("use_teacher", c.eval.use_teacher);
  }
  if (j.contains("arch")) c.arch = arch_from(j.at("arch"));
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["dataset"] = json{{"kind", c.dataset.kind},
                      {"root", c.dataset.root},
                      {"train_sources", c.dataset.train_sources},
                      {"test_sources", c.dataset.test_sources},
                      {"rater", c.dataset.rater},
                      {"side", c.dataset.side},
                      {"synth_seed", c.dataset.synth_seed},
                      {"synth_train", c.dataset.synth_train},
                      {"synth_test", c.dataset.synth_test},
                      {"synth_side", c.dataset.synth_side},
                      {"boundary_noise", c.dataset.boundary_noise}};
  j["mpggd"] = json{{"k", c.mpggd.k},
                    {"phi", c.mpggd.phi},
                    {"max_epochs", c.mpggd.max_epochs},
                    {"base_seed", c.mpggd.base_seed}};
  j["noise_aware"] = json{{"m", c.noise.m},       {"sigma", c.noise.sigma},
                          {"alpha", c.noise.alpha}, {"w_max", c.noise.w_max},
                          {"beta", c.noise.beta},   {"h0_frac", c.noise.h0_frac}};
  j["recipe"] = json{{"lr0", c.recipe.lr0},
                     {"decay_every", c.recipe.decay_every},
                     {"decay_factor", c.recipe.decay_factor},
                     {"epochs", c.recipe.epochs},
                     {"batch", c.recipe.batch},
                     {"beta1", c.recipe.beta1},
                     {"beta2", c.recipe.beta2},
                     {"eps", c.recipe.eps}};
  j["eval"] = json{{"target", c.eval.target}, {"use_teacher", c.eval.use_teacher}};
  j["arch"] = arch_to(c.arch);
  return j;
}

}  // namespace

RunConfig RunConfig::load(const fs::path& path) {
  json j = load_layered(path, 0);
  RunConfig c = from_json(j);
  if (const char* env = std::getenv("MPNN_OUTPUT_DIR")) {
    c.output_dir = env;
  }
  if (const char* env = std::getenv("MPNN_SEED")) {
    try {
      c.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("MPNN_SEED is not an integer: '") + env + "'");
    }
  }
  return c;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  try {
    return from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
}

std::string RunConfig::to_json_text() const { return to_json(*this).dump(2) + "\n"; }

std::string RunConfig::hash() const {
  // identifies the experiment, not its location: reruns of one configuration
  // into different output directories share a hash
  RunConfig c = *this;
  c.output_dir.clear();
  return fnv1a_hex(c.to_json_text());
}

void RunConfig::validate() const {
  MPNN_CHECK_AS(ConfigError, !output_dir.empty(), "output_dir must not be empty");
  MPNN_CHECK_AS(ConfigError, dataset.side >= 4, "dataset.side too small");
  MPNN_CHECK_AS(ConfigError,
                eval.target == "rater1" || eval.target == "majority-vote" ||
                    eval.target == "clean",
                "eval.target must be rater1 | majority-vote | clean, got '",
                eval.target, "'");
  MPNN_CHECK_AS(ConfigError, mpggd.k >= 2, "mpggd.k must be >= 2");
  MPNN_CHECK_AS(ConfigError, mpggd.phi > 0.0 && mpggd.phi < 1.0,
                "mpggd.phi must be in (0,1)");
  recipe.validate();
  noise::NoiseAwareConfig n = noise;
  n.t_max = 1;  // horizon is derived at training time
  n.validate();
  arch.validate();
}

DirLock::DirLock(const fs::path& run_dir) {
  fs::create_directories(run_dir);
  lock_path_ = run_dir / ".lock";
  std::error_code ec;
  if (!fs::create_directory(lock_path_, ec) || ec) {
    throw ConfigError("run directory is locked by another process: " +
                      run_dir.string() + " (remove " + lock_path_.string() +
                      " if stale)");
  }
  held_ = true;
}

DirLock::~DirLock() {
  if (held_) {
    std::error_code ec;
    fs::remove(lock_path_, ec);
  }
}

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mpnn::config
