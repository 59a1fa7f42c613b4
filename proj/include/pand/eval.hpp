#pragma once

#include "pand/config.hpp"
#include "pand/core.hpp"
#include "pand/losses.hpp"
#include "pand/metrics.hpp"

#include <string>
#include <vector>

namespace pand {

/// Percent of rows whose argmax (ties resolved to the lowest index) equals
/// the label.
template <class S>
double top1_accuracy(const Mat<S>& logits, const std::vector<int>& labels) {
  const Index n = logits.rows();
  if (n == 0) throw EvalError("cannot evaluate an empty split");
  if (n != static_cast<Index>(labels.size())) {
    throw ShapeError("logit rows " + std::to_string(n) + " vs label count " +
                     std::to_string(labels.size()));
  }
  Index correct = 0;
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    for (Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

/// Mean JS between teacher and student relation distributions over the
/// teacher's neighborhoods; the quantity the structural loss minimizes,
/// reported as a diagnostic.
template <class S>
double neighborhood_consistency(const Mat<S>& teacher_logits, const Mat<S>& student_logits,
                                const std::vector<int>& labels, int k) {
  LossWeightsT<S> w;
  w.k = k;
  w.nsd_temperature = S(1);
  return static_cast<double>(nsd_loss(teacher_logits, student_logits, labels, w));
}

struct ResultRow {
  std::string method;
  std::string dataset;
  std::string student;
  double top1 = 0;
  std::uint64_t config_hash = 0;
};

/// Keyed result rows plus plain-text / tab-separated rendering.
struct ResultTable {
  std::vector<ResultRow> rows;

  std::string to_text() const;
  std::string to_tsv() const;
};

/// "N d" header, then one "id label v1 .. vd" line per sample (%.9g floats).
void export_embeddings(const Mat<float>& features, const std::vector<std::string>& ids,
                       const std::vector<int>& labels, const std::string& path);

/// One full distillation per grid value, all sharing the same Stage-PSC
/// anchors and student seed. `out_dir`, when non-empty, receives one metrics
/// file per cell; `workers` > 1 runs cells concurrently.
ResultTable run_sweep(const Config& base, const std::vector<double>& grid, int workers,
                      const std::string& out_dir);

/// The four-row component matrix: hand-written prompts vs learned anchors,
/// with and without the structural loss.
ResultTable run_ablation(const Config& base);

}  // namespace pand
