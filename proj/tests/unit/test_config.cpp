#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mpnn/config.hpp"

using namespace mpnn;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream out(p, std::ios::trunc);
  out << text;
  return p;
}

}  // namespace

TEST_CASE("defaults carry the reference hyperparameters") {
  config::RunConfig c;
  CHECK(c.mpggd.k == 5);
  CHECK(c.mpggd.phi == 0.93);
  CHECK(c.noise.alpha == 0.99);
  CHECK(c.noise.w_max == 0.1);
  CHECK(c.noise.beta == 1.0);
  CHECK(c.noise.h0_frac == 0.75);
  CHECK(c.recipe.lr0 == 5e-4);
  CHECK(c.recipe.batch == 8);
  CHECK(c.recipe.decay_every == 2000);
  CHECK(c.recipe.decay_factor == 0.1);
  CHECK(c.recipe.epochs == 100);
  CHECK(c.recipe.beta1 == 0.9);
  CHECK(c.recipe.beta2 == 0.99);
}

TEST_CASE("config round-trips through its canonical text") {
  config::RunConfig c;
  c.seed = 9;
  c.dataset.kind = "synth";
  c.dataset.root = "/tmp/x";
  c.dataset.side = 64;
  c.arch = net::ArchConfig::preset("tiny");
  const std::string text = c.to_json_text();
  const config::RunConfig d = config::RunConfig::from_json_text(text);
  CHECK(d.seed == 9);
  CHECK(d.dataset.kind == "synth");
  CHECK(d.arch == c.arch);
  CHECK(d.to_json_text() == text);
  CHECK(d.hash() == c.hash());
}

TEST_CASE("include layering merges base values under the including file") {
  write_file("mpnn_base_cfg.json", R"({
    "seed": 3,
    "recipe": { "epochs": 10, "batch": 4 },
    "mpggd": { "k": 4 }
  })");
  const fs::path top = write_file("mpnn_top_cfg.json", R"({
    "include": "mpnn_base_cfg.json",
    "recipe": { "epochs": 2 }
  })");
  const config::RunConfig c = config::RunConfig::load(top);
  CHECK(c.seed == 3);            // from base
  CHECK(c.recipe.epochs == 2);   // overridden
  CHECK(c.recipe.batch == 4);    // from base, merged inside the block
  CHECK(c.mpggd.k == 4);
}

TEST_CASE("unknown keys and malformed values are config errors") {
  const fs::path bad = write_file("mpnn_bad_cfg.json", R"({ "sede": 3 })");
  CHECK_THROWS_AS(config::RunConfig::load(bad), ConfigError);
  const fs::path bad2 = write_file("mpnn_bad2_cfg.json", R"({ "recipe": { "lr": 1 } })");
  CHECK_THROWS_AS(config::RunConfig::load(bad2), ConfigError);
  const fs::path bad3 = write_file("mpnn_bad3_cfg.json", "not json");
  CHECK_THROWS_AS(config::RunConfig::load(bad3), ConfigError);
  CHECK_THROWS_AS(config::RunConfig::load("/nonexistent/cfg.json"), ConfigError);
}

TEST_CASE("environment variables override output dir and seed") {
  const fs::path p = write_file("mpnn_env_cfg.json",
                                R"({ "seed": 5, "output_dir": "from_file" })");
  setenv("MPNN_OUTPUT_DIR", "/tmp/from_env", 1);
  setenv("MPNN_SEED", "77", 1);
  const config::RunConfig c = config::RunConfig::load(p);
  unsetenv("MPNN_OUTPUT_DIR");
  unsetenv("MPNN_SEED");
  CHECK(c.output_dir == "/tmp/from_env");
  CHECK(c.seed == 77);
}

TEST_CASE("hash ignores the run location but tracks the experiment") {
  config::RunConfig a, b;
  a.output_dir = "runs/a";
  b.output_dir = "runs/b";
  CHECK(a.hash() == b.hash());
  b.noise.w_max = 0.0;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("run dir lock excludes a second writer") {
  const fs::path dir = fs::temp_directory_path() / "mpnn_test_lock";
  fs::remove_all(dir);
  {
    config::DirLock lock(dir);
    CHECK_THROWS_AS(config::DirLock{dir}, ConfigError);
  }
  // released on destruction
  config::DirLock again(dir);
  fs::remove_all(dir);
}
