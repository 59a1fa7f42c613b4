#include "pand/eval.hpp"

#include "pand/train.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <thread>

namespace pand {

namespace {

std::string fmt_double(double v, const char* spec = "%.9g") {
  char buf[40];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

std::string ResultTable::to_text() const {
  std::size_t method_w = 6, dataset_w = 7, student_w = 7;
  for (const auto& r : rows) {
    method_w = std::max(method_w, r.method.size());
    dataset_w = std::max(dataset_w, r.dataset.size());
    student_w = std::max(student_w, r.student.size());
  }
  auto pad = [](const std::string& s, std::size_t w) {
    return s + std::string(w - s.size() + 2, ' ');
  };
  std::string out = pad("method", method_w) + pad("dataset", dataset_w) +
                    pad("student", student_w) + pad("top1", 7) + "config\n";
  for (const auto& r : rows) {
    out += pad(r.method, method_w) + pad(r.dataset, dataset_w) + pad(r.student, student_w) +
           pad(fmt_double(r.top1, "%.2f"), 7) + to_hex(r.config_hash) + "\n";
  }
  return out;
}

std::string ResultTable::to_tsv() const {
  std::string out = "method\tdataset\tstudent\ttop1\tconfig\n";
  for (const auto& r : rows) {
    out += r.method + "\t" + r.dataset + "\t" + r.student + "\t" + fmt_double(r.top1) + "\t" +
           to_hex(r.config_hash) + "\n";
  }
  return out;
}

void export_embeddings(const Mat<float>& features, const std::vector<std::string>& ids,
                       const std::vector<int>& labels, const std::string& path) {
  const Index n = features.rows();
  if (n == 0) throw EvalError("cannot export an empty split");
  if (n != static_cast<Index>(ids.size()) || n != static_cast<Index>(labels.size())) {
    throw ShapeError("feature rows " + std::to_string(n) + " vs " + std::to_string(ids.size()) +
                     " ids / " + std::to_string(labels.size()) + " labels");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path);
  std::string text = std::to_string(n) + " " + std::to_string(features.cols()) + "\n";
  for (Index i = 0; i < n; ++i) {
    text += ids[static_cast<std::size_t>(i)];
    text += " " + std::to_string(labels[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < features.cols(); ++j) {
      text += " " + fmt_double(static_cast<double>(features(i, j)));
    }
    text += "\n";
  }
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed: " + path);
}

ResultTable run_sweep(const Config& base, const std::vector<double>& grid, int workers,
                      const std::string& out_dir) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  for (double v : grid) {
    if (v < 0) throw ConfigError("sweep grid values must be non-negative");
  }
  const Config cfg = base.resolved();
  validate_config(cfg);

  // Stage-PSC once; every cell distills against the same frozen anchors.
  ToySplits data = build_dataset(cfg);
  const int k = static_cast<int>(cfg.get_int("nsd.weights.k"));
  if (k > data.train.num_classes() - 1) {
    throw ConfigError("k exceeds C-1 (k=" + std::to_string(k) + ", C=" +
                      std::to_string(data.train.num_classes()) + ")");
  }
  VlmBundle bundle = build_vlm(cfg, data.train);
  MetricsLog psc_log;
  const SemanticAnchors anchors = stage_psc(cfg, data, bundle, psc_log);
  const TeacherOutput t_train = teacher_forward(*bundle.pair, anchors, data.train.inputs);

  ResultTable table;
  table.rows.resize(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t cell = next.fetch_add(1);
      if (cell >= grid.size()) return;
      Config cell_cfg = cfg;
      cell_cfg.set("nsd.weights.lambda_nsd", fmt_double(grid[cell], "%g"));

      StudentModel<float> student(
          data.train.inputs.cols(), cell_cfg.get_int("student.hidden_dim"),
          cell_cfg.get_int("student.feature_dim"), data.train.num_classes(),
          bundle.pair->feature_dim(), static_cast<std::uint64_t>(cell_cfg.get_int("student.seed")));
      AdamW<float> opt(student.params(),
                       static_cast<float>(cell_cfg.get_float("nsd.weight_decay")));
      MetricsLog log;
      run_nsd_stage(cell_cfg, data, t_train, anchors, student, opt, log);
      if (!out_dir.empty()) {
        log.write_jsonl(out_dir + "/sweep-lambda-" + fmt_double(grid[cell], "%g") + ".jsonl");
      }
      ResultRow row;
      row.method = "lambda=" + fmt_double(grid[cell], "%g");
      row.dataset = cfg.get_str("data.kind");
      row.student = "toy-mlp";
      row.top1 = top1_accuracy(student.forward(data.test.inputs).logits, data.test.labels);
      row.config_hash = cell_cfg.hash();
      table.rows[cell] = std::move(row);
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const int count = std::min<int>(workers, static_cast<int>(grid.size()));
    pool.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return table;
}

ResultTable run_ablation(const Config& base) {
  const Config cfg = base.resolved();
  double lambda = cfg.get_float("nsd.weights.lambda_nsd");
  if (lambda <= 0) lambda = 0.5;  // the structural rows need a live loss
  const std::string lambda_str = fmt_double(lambda, "%g");

  struct RowSpec {
    const char* method;
    const char* anchor_mode;
    std::string lambda_nsd;
  };
  const RowSpec specs[] = {
      {"baseline", "template", "0"},
      {"+psc", "learned", "0"},
      {"+nsd", "template", lambda_str},
      {"full", "learned", lambda_str},
  };

  ResultTable table;
  for (const auto& spec : specs) {
    Config row_cfg = cfg;
    row_cfg.set("psc.anchor_mode", spec.anchor_mode);
    row_cfg.set("nsd.weights.lambda_nsd", spec.lambda_nsd);
    PipelineResult res = run_pipeline(row_cfg);
    ResultRow row;
    row.method = spec.method;
    row.dataset = cfg.get_str("data.kind");
    row.student = "toy-mlp";
    row.top1 = res.student_top1;
    row.config_hash = res.config_hash;
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace pand
