#include "doctest.h"

#include <pand/cli.hpp>
#include <pand/config.hpp>
#include <pand/train.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace pand;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("pand");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Writes the unit-suite pipeline config and returns its path.
std::string write_small_config(const std::string& dir) {
  Config cfg = Config::defaults();
  cfg.set("seed", "3");
  cfg.set("data.classes", "6");
  cfg.set("data.per_class", "20");
  cfg.set("data.dim", "12");
  cfg.set("encoder.feature_dim", "32");
  cfg.set("encoder.token_dim", "16");
  cfg.set("psc.lr", "0.01");
  cfg.set("psc.epochs", "40");
  cfg.set("psc.batch_size", "64");
  cfg.set("psc.n_ctx", "8");
  cfg.set("nsd.lr", "0.003");
  cfg.set("nsd.epochs", "6");
  cfg.set("nsd.batch_size", "64");
  cfg.set("paths.anchors", dir + "/anchors.bin");
  cfg.set("paths.checkpoints", dir + "/student.ckpt");
  cfg.set("paths.metrics", dir + "/metrics.jsonl");
  const std::string path = dir + "/small.cfg";
  std::ofstream out(path);
  out << cfg.canonical();
  return path;
}

}  // namespace

TEST_CASE("usage errors exit with code 2, help with 0") {
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"no-such-command"}) == 2);
  CHECK(run_cli({"distill", "--no-such-flag"}) == 2);
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"distill", "--set", "not_an_assignment"}) == 2);
  CHECK(run_cli({"distill", "--set", "psc.lr=fast"}) == 2);
  CHECK(run_cli({"distill", "--config", "missing_config_file.cfg"}) == 2);
}

TEST_CASE("config errors exit with code 2") {
  fs::create_directories("cli_test_cfg");
  const std::string cfg = write_small_config("cli_test_cfg");
  CHECK(run_cli({"distill", "--config", cfg, "--set", "nsd.weights.k=400"}) == 2);
  CHECK(run_cli({"distill", "--config", cfg, "--set", "data.kind=imagenet"}) == 2);
  fs::remove_all("cli_test_cfg");
}

TEST_CASE("calibrate, distill, evaluate round-trip through the filesystem") {
  fs::create_directories("cli_test_run");
  const std::string cfg = write_small_config("cli_test_run");

  CHECK(run_cli({"calibrate", "--config", cfg, "--out", "cli_test_run/calibrated.bin"}) == 0);
  SemanticAnchors anchors = load_anchors("cli_test_run/calibrated.bin");
  CHECK(anchors.num_classes() == 6);

  // Distill with the calibrated anchors preloaded.
  CHECK(run_cli({"distill", "--config", cfg, "--anchors", "cli_test_run/calibrated.bin"}) == 0);
  CHECK(fs::exists("cli_test_run/student.ckpt"));
  CHECK(fs::exists("cli_test_run/metrics.jsonl"));

  // Evaluate the persisted student; export embeddings.
  CHECK(run_cli({"evaluate", "--config", cfg, "--anchors", "cli_test_run/calibrated.bin",
                 "--out", "cli_test_run/embed.txt"}) == 0);
  CHECK(fs::exists("cli_test_run/embed.txt"));

  fs::remove_all("cli_test_run");
}

TEST_CASE("distill is deterministic across invocations") {
  // The same command twice into the same paths (the checkpoint echoes the
  // resolved config, so the output locations must match too).
  fs::create_directories("cli_det");
  const std::string cfg = write_small_config("cli_det");

  CHECK(run_cli({"distill", "--config", cfg}) == 0);
  const std::string metrics = slurp("cli_det/metrics.jsonl");
  const std::string anchors = slurp("cli_det/anchors.bin");
  const std::string ckpt = slurp("cli_det/student.ckpt");

  CHECK(run_cli({"distill", "--config", cfg}) == 0);
  CHECK(slurp("cli_det/metrics.jsonl") == metrics);
  CHECK(slurp("cli_det/anchors.bin") == anchors);
  CHECK(slurp("cli_det/student.ckpt") == ckpt);

  fs::remove_all("cli_det");
}

TEST_CASE("seed and set flags reorder the resolved config") {
  fs::create_directories("cli_seed_test");
  const std::string cfg = write_small_config("cli_seed_test");

  // --seed rewrites the master seed (and so the derived sub-seeds);
  // --set applies after it and wins.
  CHECK(run_cli({"gen-toy", "--config", cfg, "--seed", "9",
                 "--out", "cli_seed_test/toy9"}) == 0);
  CHECK(run_cli({"gen-toy", "--config", cfg, "--seed", "9", "--set", "seed=3",
                 "--out", "cli_seed_test/toy3"}) == 0);
  CHECK(run_cli({"gen-toy", "--config", cfg, "--out", "cli_seed_test/toy3b"}) == 0);

  CHECK(slurp("cli_seed_test/toy3/train.txt") == slurp("cli_seed_test/toy3b/train.txt"));
  CHECK(slurp("cli_seed_test/toy9/train.txt") != slurp("cli_seed_test/toy3/train.txt"));

  fs::remove_all("cli_seed_test");
}

TEST_CASE("gen-toy then distill from the container kind") {
  fs::create_directories("cli_gen_test");
  const std::string cfg = write_small_config("cli_gen_test");

  // The generator writes under the configured split names, so flipping the
  // kind and pointing data.root at the directory is the whole round trip.
  CHECK(run_cli({"gen-toy", "--config", cfg, "--out", "cli_gen_test/data"}) == 0);
  CHECK(fs::exists("cli_gen_test/data/train.txt"));
  CHECK(fs::exists("cli_gen_test/data/test.txt"));

  CHECK(run_cli({"distill", "--config", cfg,
                 "--set", "data.kind=container",
                 "--set", "data.root=cli_gen_test/data"}) == 0);
  CHECK(fs::exists("cli_gen_test/student.ckpt"));

  fs::remove_all("cli_gen_test");
}

TEST_CASE("sweep and ablate write result tables") {
  fs::create_directories("cli_sweep_test");
  Config cfg = Config::defaults();
  cfg.set("seed", "3");
  cfg.set("data.classes", "5");
  cfg.set("data.per_class", "15");
  cfg.set("data.dim", "10");
  cfg.set("encoder.feature_dim", "24");
  cfg.set("encoder.token_dim", "12");
  cfg.set("psc.lr", "0.01");
  cfg.set("psc.epochs", "25");
  cfg.set("psc.n_ctx", "6");
  cfg.set("nsd.lr", "0.003");
  cfg.set("nsd.epochs", "4");
  cfg.set("sweep.grid", "0,0.5");
  cfg.set("paths.anchors", "");
  cfg.set("paths.checkpoints", "");
  cfg.set("paths.metrics", "");
  {
    std::ofstream out("cli_sweep_test/sweep.cfg");
    out << cfg.canonical();
  }

  CHECK(run_cli({"sweep", "--config", "cli_sweep_test/sweep.cfg",
                 "--out", "cli_sweep_test/out", "--workers", "2"}) == 0);
  const std::string table = slurp("cli_sweep_test/out/sweep.tsv");
  std::istringstream in(table);
  std::string line;
  int rows = 0;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    ++rows;
    CHECK(line.find("lambda=") == 0);
  }
  CHECK(rows == 2);
  CHECK(fs::exists("cli_sweep_test/out/sweep-lambda-0.jsonl"));
  CHECK(fs::exists("cli_sweep_test/out/sweep-lambda-0.5.jsonl"));

  CHECK(run_cli({"ablate", "--config", "cli_sweep_test/sweep.cfg",
                 "--out", "cli_sweep_test/ablate"}) == 0);
  const std::string ab = slurp("cli_sweep_test/ablate/ablation.tsv");
  CHECK(std::count(ab.begin(), ab.end(), '\n') == 5);  // header + 4 rows

  fs::remove_all("cli_sweep_test");
}
