#include "doctest.h"

#include <pand/train.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace pand;
namespace fs = std::filesystem;

namespace {

// Small-but-real pipeline config: large enough to learn, small enough for a
// unit suite.
Config small_config() {
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
  cfg.set("nsd.epochs", "8");
  cfg.set("nsd.batch_size", "64");
  cfg.set("paths.anchors", "");
  cfg.set("paths.checkpoints", "");
  cfg.set("paths.metrics", "");
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("validate_config rejects out-of-range settings") {
  Config cfg = small_config();
  validate_config(cfg.resolved());

  auto broken = [&](const char* key, const char* value) {
    Config c = small_config();
    c.set(key, value);
    CHECK_THROWS_AS(validate_config(c.resolved()), ConfigError);
  };
  broken("data.kind", "imagenet");
  broken("psc.anchor_mode", "frozen");
  broken("nsd.weights.schedule", "cosine");
  broken("psc.lr", "0");
  broken("psc.tau", "-0.07");
  broken("nsd.nsd_temperature", "0");
  broken("nsd.weights.k", "0");
  broken("nsd.weights.lambda_nsd", "-0.5");
  broken("psc.epochs", "-1");
  broken("nsd.batch_size", "0");
  broken("psc.n_ctx", "0");
}

TEST_CASE("weights_at follows the fixed and linear schedules") {
  Config cfg = small_config();
  LossWeights w0 = weights_at(cfg.resolved(), 0, 10);
  LossWeights w9 = weights_at(cfg.resolved(), 9, 10);
  CHECK(w0.lambda_nsd == doctest::Approx(0.5));
  CHECK(w9.lambda_nsd == doctest::Approx(0.5));
  CHECK(w0.k == 3);

  Config lin = small_config();
  lin.set("nsd.weights.schedule", "linear");
  lin.set("nsd.weights.lambda_nsd_end", "0.1");
  LossWeights l0 = weights_at(lin.resolved(), 0, 10);
  LossWeights l5 = weights_at(lin.resolved(), 5, 10);
  LossWeights l9 = weights_at(lin.resolved(), 9, 10);
  CHECK(l0.lambda_nsd == doctest::Approx(0.5));
  CHECK(l5.lambda_nsd == doctest::Approx(0.5 + (0.1 - 0.5) * 5.0 / 9.0));
  CHECK(l9.lambda_nsd == doctest::Approx(0.1));
  // Lambdas without an *_end hold their starting value.
  CHECK(l9.lambda_cls == doctest::Approx(0.01));
}

TEST_CASE("build_dataset honors the PAND_DATA_ROOT fallback for containers") {
  ToySplits toy = make_toy(4, 10, 8, 0.9, 0.1, 7);
  fs::create_directories("data_root_test");
  save_split(toy.train, "data_root_test/train.ctr");
  save_split(toy.test, "data_root_test/test.ctr");

  Config cfg = Config::defaults();
  cfg.set("data.kind", "container");
  cfg.set("data.train_split", "train.ctr");
  cfg.set("data.test_split", "test.ctr");

  // Explicit root.
  cfg.set("data.root", "data_root_test");
  ToySplits a = build_dataset(cfg.resolved());
  CHECK(hash_bytes(a.train.inputs) == hash_bytes(toy.train.inputs));

  // Empty root + environment fallback.
  cfg.set("data.root", "");
  setenv("PAND_DATA_ROOT", "data_root_test", 1);
  ToySplits b = build_dataset(cfg.resolved());
  CHECK(hash_bytes(b.test.inputs) == hash_bytes(toy.test.inputs));

  unsetenv("PAND_DATA_ROOT");
  CHECK_THROWS_AS(build_dataset(cfg.resolved()), ConfigError);

  fs::remove_all("data_root_test");
}

TEST_CASE("neighborhood size is validated against the class count") {
  Config cfg = small_config();
  cfg.set("nsd.weights.k", "400");
  CHECK_THROWS_WITH_AS(run_pipeline(cfg.resolved()), doctest::Contains("k exceeds C-1"),
                       ConfigError);
}

TEST_CASE("full pipeline: descent, evaluation, determinism") {
  Config cfg = small_config();
  PipelineResult r1 = run_pipeline(cfg.resolved());

  REQUIRE(r1.student.has_value());
  CHECK(r1.anchors.frozen);
  CHECK(r1.anchors.num_classes() == 6);
  CHECK(r1.teacher_top1 >= 80.0);  // strict 95% bar is enforced at full scale
  CHECK(r1.student_top1 > 0.0);
  CHECK(r1.consistency >= 0.0);
  CHECK(r1.config_hash == cfg.resolved().hash());

  // Strict descent of the training objective across the stage.
  REQUIRE(static_cast<int>(r1.nsd_log.records().size()) == 8);
  CHECK(r1.nsd_log.records().back().total < r1.nsd_log.records().front().total);
  // The first record's lr is the configured peak; later epochs anneal.
  CHECK(r1.nsd_log.records().front().lr == doctest::Approx(0.003));
  CHECK(r1.nsd_log.records().back().lr < 0.003);
  for (const auto& rec : r1.nsd_log.records()) {
    CHECK(rec.stage == "nsd");
    CHECK(rec.top1 >= 0.0);
  }
  CHECK_FALSE(r1.psc_log.empty());

  // Bitwise repeatability.
  PipelineResult r2 = run_pipeline(cfg.resolved());
  CHECK(hash_bytes(r1.anchors.matrix) == hash_bytes(r2.anchors.matrix));
  CHECK(r1.student->weight_hash() == r2.student->weight_hash());
  CHECK(r1.nsd_log.to_jsonl() == r2.nsd_log.to_jsonl());
  CHECK(r1.psc_log.to_jsonl() == r2.psc_log.to_jsonl());
  CHECK(r1.teacher_top1 == r2.teacher_top1);
  CHECK(r1.student_top1 == r2.student_top1);
}

TEST_CASE("zero NSD epochs leaves the student at its initialization") {
  Config cfg = small_config();
  cfg.set("nsd.epochs", "0");
  PipelineResult r = run_pipeline(cfg.resolved());
  REQUIRE(r.student.has_value());
  CHECK(r.nsd_log.empty());

  Config rc = cfg.resolved();
  StudentModel<float> fresh(12, static_cast<Index>(rc.get_int("student.hidden_dim")),
                            static_cast<Index>(rc.get_int("student.feature_dim")), 6, 32,
                            static_cast<std::uint64_t>(rc.get_int("student.seed")));
  CHECK(r.student->weight_hash() == fresh.weight_hash());
}

TEST_CASE("template anchor mode reproduces the fixed-prompt encoder output") {
  Config cfg = small_config();
  cfg.set("psc.anchor_mode", "template");
  Config rc = cfg.resolved();
  ToySplits data = build_dataset(rc);
  VlmBundle bundle = build_vlm(rc, data.train);
  MetricsLog log;
  SemanticAnchors a = stage_psc(rc, data, bundle, log);
  SemanticAnchors b = fixed_template_anchors<float>(*bundle.pair, bundle.template_vocab);
  CHECK(hash_bytes(a.matrix) == hash_bytes(b.matrix));
  CHECK(a.frozen);
  CHECK(log.empty());  // nothing is optimized
}

TEST_CASE("preset anchors skip Stage-PSC") {
  Config cfg = small_config();
  Config rc = cfg.resolved();
  ToySplits data = build_dataset(rc);
  VlmBundle bundle = build_vlm(rc, data.train);
  MetricsLog log;
  SemanticAnchors anchors = stage_psc(rc, data, bundle, log);

  PipelineResult r = run_pipeline(rc, false, &anchors);
  CHECK(hash_bytes(r.anchors.matrix) == hash_bytes(anchors.matrix));
  CHECK(r.psc_log.empty());
  REQUIRE(r.student.has_value());

  // Unfrozen preset anchors are refused.
  SemanticAnchors thawed = anchors;
  thawed.frozen = false;
  CHECK_THROWS_AS(run_pipeline(rc, false, &thawed), FreezeError);

  // Preset anchors with the wrong width are refused.
  SemanticAnchors wrong = anchors;
  wrong.matrix = Mat<float>::Ones(6, 31);
  CHECK_THROWS_AS(run_pipeline(rc, false, &wrong), ShapeError);
}

TEST_CASE("baseline stage is bit-identical to the zero-lambda NSD stage") {
  Config cfg = small_config();
  cfg.set("nsd.weights.lambda_nsd", "0");
  Config rc = cfg.resolved();

  ToySplits data = build_dataset(rc);
  VlmBundle bundle = build_vlm(rc, data.train);
  MetricsLog psc_log;
  SemanticAnchors anchors = stage_psc(rc, data, bundle, psc_log);
  TeacherOutput t_train = teacher_forward<float>(*bundle.pair, anchors,
                                                 data.train.inputs);

  const Index hidden = static_cast<Index>(rc.get_int("student.hidden_dim"));
  const Index feat = static_cast<Index>(rc.get_int("student.feature_dim"));
  const auto seed = static_cast<std::uint64_t>(rc.get_int("student.seed"));

  StudentModel<float> with_branch(12, hidden, feat, 6, 32, seed);
  auto wp = with_branch.params();
  AdamW<float> opt_a(wp, static_cast<float>(rc.get_float("nsd.weight_decay")));
  MetricsLog log_a;
  run_nsd_stage(rc, data, t_train, anchors, with_branch, opt_a, log_a);

  StudentModel<float> without_branch(12, hidden, feat, 6, 32, seed);
  auto wq = without_branch.params();
  AdamW<float> opt_b(wq, static_cast<float>(rc.get_float("nsd.weight_decay")));
  MetricsLog log_b;
  run_baseline_stage(rc, data, t_train, anchors, without_branch, opt_b, log_b);

  CHECK(with_branch.weight_hash() == without_branch.weight_hash());
  CHECK(log_a.to_jsonl() == log_b.to_jsonl());
}

TEST_CASE("stage loop aborts on non-finite inputs and unfrozen anchors") {
  Config cfg = small_config();
  Config rc = cfg.resolved();
  ToySplits data = build_dataset(rc);
  VlmBundle bundle = build_vlm(rc, data.train);
  MetricsLog psc_log;
  SemanticAnchors anchors = stage_psc(rc, data, bundle, psc_log);
  TeacherOutput t_train = teacher_forward<float>(*bundle.pair, anchors, data.train.inputs);

  StudentModel<float> student(12, 8, 8, 6, 32, 1);
  auto sp = student.params();
  AdamW<float> opt(sp, 1e-4f);
  MetricsLog log;

  SemanticAnchors thawed = anchors;
  thawed.frozen = false;
  CHECK_THROWS_AS(run_nsd_stage(rc, data, t_train, thawed, student, opt, log), FreezeError);

  TeacherOutput poisoned = t_train;
  poisoned.features(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(run_nsd_stage(rc, data, poisoned, anchors, student, opt, log), NumericError);
}

TEST_CASE("persisted pipeline artifacts reload and match") {
  fs::create_directories("pipeline_out");
  Config cfg = small_config();
  cfg.set("nsd.epochs", "4");
  cfg.set("paths.anchors", "pipeline_out/anchors.bin");
  cfg.set("paths.checkpoints", "pipeline_out/student.ckpt");
  cfg.set("paths.metrics", "pipeline_out/metrics.jsonl");
  Config rc = cfg.resolved();

  PipelineResult r = run_pipeline(rc, /*persist=*/true);
  REQUIRE(r.student.has_value());

  SemanticAnchors anchors = load_anchors("pipeline_out/anchors.bin");
  CHECK(hash_bytes(anchors.matrix) == hash_bytes(r.anchors.matrix));
  CHECK(anchors.class_names == r.anchors.class_names);

  CheckpointState state = load_checkpoint("pipeline_out/student.ckpt");
  CHECK(state.student.weight_hash() == r.student->weight_hash());
  CHECK(state.epoch == 4);
  // 6 classes x 16 train samples = 96 rows; 2 batches of 64 per epoch.
  CHECK(state.adam_step == 8);
  CHECK(state.config_echo == rc.canonical());

  const std::string metrics = slurp("pipeline_out/metrics.jsonl");
  CHECK(metrics == r.psc_log.to_jsonl() + r.nsd_log.to_jsonl());

  // A second persisted run writes byte-identical artifacts.
  const std::string anchors_bytes = slurp("pipeline_out/anchors.bin");
  const std::string ckpt_bytes = slurp("pipeline_out/student.ckpt");
  run_pipeline(rc, true);
  CHECK(slurp("pipeline_out/anchors.bin") == anchors_bytes);
  CHECK(slurp("pipeline_out/student.ckpt") == ckpt_bytes);
  CHECK(slurp("pipeline_out/metrics.jsonl") == metrics);

  fs::remove_all("pipeline_out");
}
