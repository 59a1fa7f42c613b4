#include "pand/cli.hpp"

#include "pand/anchors.hpp"
#include "pand/eval.hpp"
#include "pand/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace pand::cli {

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_path, "Config file (dotted key = value lines)");
  cmd->add_option("--set", args->overrides, "Override: key=value (repeatable)")->type_size(1);
  cmd->add_option("--seed", args->seed, "Master seed (overrides the config's `seed`)");
}

/// File -> --seed -> --set, then resolve sub-seeds and echo.
Config resolve_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? Config::defaults() : Config::from_file(args.config_path);
  if (args.seed >= 0) cfg.set_master_seed(args.seed);
  for (const auto& assignment : args.overrides) cfg.apply_override(assignment);
  Config resolved = cfg.resolved();
  std::cout << resolved.canonical();
  std::cout << "config hash: " << to_hex(resolved.hash()) << "\n";
  return resolved;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      grid.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("sweep.grid entry '" + item + "' is not a number");
    }
  }
  if (grid.empty()) throw ConfigError("sweep.grid is empty");
  return grid;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

int cmd_calibrate(const CommonArgs& args, const std::string& out_path) {
  Config cfg = resolve_config(args);
  validate_config(cfg);
  ToySplits data = build_dataset(cfg);
  VlmBundle bundle = build_vlm(cfg, data.train);
  MetricsLog log;
  SemanticAnchors anchors = stage_psc(cfg, data, bundle, log);
  const TeacherOutput t_test = teacher_forward(*bundle.pair, anchors, data.test.inputs);
  std::printf("teacher top-1: %.2f\n", top1_accuracy(t_test.logits, data.test.labels));

  std::string path = out_path.empty() ? cfg.get_str("paths.anchors") : out_path;
  if (!path.empty()) {
    save_anchors(anchors, path);
    std::printf("anchors written: %s\n", path.c_str());
  }
  const std::string metrics_path = cfg.get_str("paths.metrics");
  if (!metrics_path.empty()) {
    log.write_jsonl(metrics_path);
    std::printf("metrics written: %s\n", metrics_path.c_str());
  }
  return 0;
}

int cmd_distill(const CommonArgs& args, const std::string& anchors_path,
                const std::string& out_path) {
  Config cfg = resolve_config(args);
  if (!out_path.empty()) cfg.set("paths.checkpoints", out_path);
  SemanticAnchors preset;
  const bool have_preset = !anchors_path.empty();
  if (have_preset) preset = load_anchors(anchors_path);
  PipelineResult res = run_pipeline(cfg, /*persist=*/true, have_preset ? &preset : nullptr);
  std::printf("teacher top-1: %.2f\n", res.teacher_top1);
  std::printf("student top-1: %.2f\n", res.student_top1);
  std::printf("neighborhood consistency (mean JS): %.6f\n", res.consistency);
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& anchors_path,
                 const std::string& out_path) {
  Config cfg = resolve_config(args);
  validate_config(cfg);
  ToySplits data = build_dataset(cfg);
  VlmBundle bundle = build_vlm(cfg, data.train);

  std::string apath = anchors_path.empty() ? cfg.get_str("paths.anchors") : anchors_path;
  if (apath.empty()) throw ConfigError("evaluate needs anchors (--anchors or paths.anchors)");
  SemanticAnchors anchors = load_anchors(apath);
  const TeacherOutput t_test = teacher_forward(*bundle.pair, anchors, data.test.inputs);
  std::printf("teacher top-1: %.2f\n", top1_accuracy(t_test.logits, data.test.labels));

  Mat<float> export_feats = t_test.features;
  const std::string ckpt = cfg.get_str("paths.checkpoints");
  if (!ckpt.empty() && std::filesystem::exists(ckpt)) {
    CheckpointState state = load_checkpoint(ckpt);
    StudentOutput s_test = state.student.forward(data.test.inputs);
    std::printf("student top-1: %.2f\n", top1_accuracy(s_test.logits, data.test.labels));
    std::printf("neighborhood consistency (mean JS): %.6f\n",
                neighborhood_consistency(t_test.logits, s_test.logits, data.test.labels,
                                         static_cast<int>(cfg.get_int("nsd.weights.k"))));
    export_feats = s_test.projected;
  }
  if (!out_path.empty()) {
    export_embeddings(export_feats, data.test.ids, data.test.labels, out_path);
    std::printf("embeddings written: %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_sweep(const CommonArgs& args, int workers, const std::string& out_dir) {
  Config cfg = resolve_config(args);
  const std::vector<double> grid = parse_grid(cfg.get_str("sweep.grid"));
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  ResultTable table = run_sweep(cfg, grid, workers, out_dir);
  std::fputs(table.to_text().c_str(), stdout);
  if (!out_dir.empty()) {
    write_text(out_dir + "/sweep.txt", table.to_text());
    write_text(out_dir + "/sweep.tsv", table.to_tsv());
  }
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& out_dir) {
  Config cfg = resolve_config(args);
  ResultTable table = run_ablation(cfg);
  std::fputs(table.to_text().c_str(), stdout);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir + "/ablation.txt", table.to_text());
    write_text(out_dir + "/ablation.tsv", table.to_tsv());
  }
  return 0;
}

int cmd_gen_toy(const CommonArgs& args, const std::string& out_dir) {
  Config cfg = resolve_config(args);
  validate_config(cfg);
  if (cfg.get_str("data.kind") != "toy") {
    throw ConfigError("gen-toy requires data.kind = toy");
  }
  ToySplits data = build_dataset(cfg);
  std::filesystem::create_directories(out_dir);
  // Write under the configured split names so the same config reloads the
  // result directly via data.kind = container, data.root = <out_dir>.
  const std::string train_path = out_dir + "/" + cfg.get_str("data.train_split");
  const std::string test_path = out_dir + "/" + cfg.get_str("data.test_split");
  save_split(data.train, train_path);
  save_split(data.test, test_path);
  std::printf("wrote %s (%lld samples) and %s (%lld samples)\n", train_path.c_str(),
              static_cast<long long>(data.train.size()), test_path.c_str(),
              static_cast<long long>(data.test.size()));
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"PAND: prompt-calibrated two-stage vision-language distillation"};
  app.require_subcommand(1);

  CommonArgs calibrate_args, distill_args, evaluate_args, sweep_args, ablate_args, gen_args;
  std::string calibrate_out, distill_anchors, distill_out, evaluate_anchors, evaluate_out;
  std::string sweep_out, ablate_out, gen_out = "toy-data";
  int workers = 1;

  CLI::App* calibrate = app.add_subcommand("calibrate", "Stage-PSC: learn and export anchors");
  add_common(calibrate, &calibrate_args);
  calibrate->add_option("--out", calibrate_out, "Anchor file to write (default: paths.anchors)");

  CLI::App* distill = app.add_subcommand("distill", "Run the pipeline (both stages) and train the student");
  add_common(distill, &distill_args);
  distill->add_option("--anchors", distill_anchors, "Reuse a calibrated anchor file (skips Stage-PSC)");
  distill->add_option("--out", distill_out, "Checkpoint path (default: paths.checkpoints)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Score saved anchors (and checkpoint, if present) on the test split");
  add_common(evaluate, &evaluate_args);
  evaluate->add_option("--anchors", evaluate_anchors, "Anchor file (default: paths.anchors)");
  evaluate->add_option("--out", evaluate_out, "Export test-split embeddings to this path");

  CLI::App* sweep = app.add_subcommand("sweep", "Distill once per lambda in sweep.grid, shared anchors");
  add_common(sweep, &sweep_args);
  sweep->add_option("--workers", workers, "Concurrent cells (default 1)");
  sweep->add_option("--out", sweep_out, "Directory for per-cell metrics and tables");

  CLI::App* ablate = app.add_subcommand("ablate", "Four-row component matrix (prompts x structural loss)");
  add_common(ablate, &ablate_args);
  ablate->add_option("--out", ablate_out, "Directory for the ablation tables");

  CLI::App* gen_toy = app.add_subcommand("gen-toy", "Generate and save the toy dataset splits");
  add_common(gen_toy, &gen_args);
  gen_toy->add_option("--out", gen_out, "Output directory (default: toy-data)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (calibrate->parsed()) return cmd_calibrate(calibrate_args, calibrate_out);
    if (distill->parsed()) return cmd_distill(distill_args, distill_anchors, distill_out);
    if (evaluate->parsed()) return cmd_evaluate(evaluate_args, evaluate_anchors, evaluate_out);
    if (sweep->parsed()) return cmd_sweep(sweep_args, workers, sweep_out);
    if (ablate->parsed()) return cmd_ablate(ablate_args, ablate_out);
    if (gen_toy->parsed()) return cmd_gen_toy(gen_args, gen_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace pand::cli
