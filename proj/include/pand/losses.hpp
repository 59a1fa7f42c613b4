#pragma once

#include "pand/anchors.hpp"
#include "pand/core.hpp"
#include "pand/student.hpp"
#include "pand/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace pand {

/// Coefficients of the combined objective. `tau` scales only the text
/// alignment logits; `nsd_temperature` optionally softens the neighborhood
/// margins (1 leaves them raw).
template <class S>
struct LossWeightsT {
  S lambda_cls = S(0.01);
  S lambda_vis = S(0.495);
  S lambda_txt = S(0.495);
  S lambda_nsd = S(0.5);
  S tau = S(2);
  int k = 3;
  S nsd_temperature = S(1);
};

using LossWeights = LossWeightsT<float>;

/// Per sample: k non-ground-truth class indices, ordered by descending
/// teacher logit with ties broken by ascending class index.
struct NeighborhoodSet {
  IntMat indices;  // N x k
  int k = 0;
};

template <class S>
struct RelationDistributionT {
  Mat<S> rho;  // N x k, rows sum to 1
};

template <class S>
struct LossBreakdownT {
  S cls = 0, vis = 0, txt = 0, nsd = 0, base = 0, total = 0;
};

using LossBreakdown = LossBreakdownT<float>;

template <class S>
NeighborhoodSet select_neighborhood(const Mat<S>& teacher_logits,
                                    const std::vector<int>& labels, int k) {
  const Index n = teacher_logits.rows();
  const Index c = teacher_logits.cols();
  if (k < 1) throw ConfigError("k must be positive, got " + std::to_string(k));
  if (k > c - 1) {
    throw ConfigError("k exceeds C-1 (k=" + std::to_string(k) + ", C=" + std::to_string(c) +
                      ")");
  }
  NeighborhoodSet nbhd;
  nbhd.k = k;
  nbhd.indices.resize(n, k);
  std::vector<int> order;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      throw IndexError("label " + std::to_string(y) + " out of range for " +
                       std::to_string(c) + " classes");
    }
    order.resize(static_cast<std::size_t>(c));
    std::iota(order.begin(), order.end(), 0);
    order.erase(order.begin() + y);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (teacher_logits(i, a) != teacher_logits(i, b)) {
        return teacher_logits(i, a) > teacher_logits(i, b);
      }
      return a < b;
    });
    for (int j = 0; j < k; ++j) nbhd.indices(i, j) = order[static_cast<std::size_t>(j)];
  }
  return nbhd;
}

/// rho_ij = softmax_j(-Delta_ij / nsd_temperature) with
/// Delta_ij = z_{i,y_i} - z_{i,nbhd_ij}, stabilized by max subtraction.
template <class S>
RelationDistributionT<S> neighborhood_distribution(const Mat<S>& logits,
                                                   const std::vector<int>& labels,
                                                   const NeighborhoodSet& nbhd,
                                                   S nsd_temperature = S(1)) {
  if (!all_finite(logits)) throw NumericError("non-finite logits in neighborhood distribution");
  const Index n = nbhd.indices.rows();
  if (logits.rows() != n) {
    throw ShapeError("logit rows " + std::to_string(logits.rows()) + " vs neighborhood rows " +
                     std::to_string(n));
  }
  Mat<S> neg_margin(n, nbhd.k);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < nbhd.k; ++j) {
      neg_margin(i, j) = (logits(i, nbhd.indices(i, j)) - logits(i, y)) / nsd_temperature;
    }
  }
  return RelationDistributionT<S>{softmax_rows(neg_margin)};
}

/// Jensen-Shannon divergence with natural log; symmetric, in [0, ln 2],
/// 0*log 0 = 0.
template <class S>
S js_divergence(const Vec<S>& p, const Vec<S>& q) {
  if (p.size() != q.size()) {
    throw ShapeError("distribution lengths differ: " + std::to_string(p.size()) + " vs " +
                     std::to_string(q.size()));
  }
  S js = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const S m = (p(i) + q(i)) / S(2);
    if (p(i) > S(0)) js += p(i) * std::log(p(i) / m) / S(2);
    if (q(i) > S(0)) js += q(i) * std::log(q(i) / m) / S(2);
  }
  return std::max(js, S(0));
}

/// Mean per-sample JS between teacher and student relation distributions
/// over teacher-chosen neighborhoods. `dstudent_logits`, when non-null,
/// receives the gradient w.r.t. the student logits; the teacher side is a
/// constant (frozen teacher).
template <class S>
S nsd_loss(const Mat<S>& teacher_logits, const Mat<S>& student_logits,
           const std::vector<int>& labels, const LossWeightsT<S>& weights,
           Mat<S>* dstudent_logits = nullptr) {
  if (teacher_logits.rows() != student_logits.rows() ||
      teacher_logits.cols() != student_logits.cols()) {
    throw ShapeError("teacher logits " + std::to_string(teacher_logits.rows()) + "x" +
                     std::to_string(teacher_logits.cols()) + " vs student logits " +
                     std::to_string(student_logits.rows()) + "x" +
                     std::to_string(student_logits.cols()));
  }
  const Index n = teacher_logits.rows();
  const S tau_nsd = weights.nsd_temperature;
  NeighborhoodSet nbhd = select_neighborhood(teacher_logits, labels, weights.k);
  Mat<S> rho_t = neighborhood_distribution(teacher_logits, labels, nbhd, tau_nsd).rho;
  Mat<S> rho_s = neighborhood_distribution(student_logits, labels, nbhd, tau_nsd).rho;

  if (dstudent_logits) *dstudent_logits = Mat<S>::Zero(n, student_logits.cols());
  S loss = 0;
  Vec<S> dq(nbhd.k);
  for (Index i = 0; i < n; ++i) {
    S js = 0;
    for (int j = 0; j < nbhd.k; ++j) {
      const S p = rho_t(i, j);
      const S q = rho_s(i, j);
      const S m = (p + q) / S(2);
      if (p > S(0)) js += p * std::log(p / m) / S(2);
      if (q > S(0)) {
        const S lq = std::log(q / m);
        js += q * lq / S(2);
        dq(j) = lq / S(2);
      } else {
        dq(j) = S(0);
      }
    }
    loss += std::max(js, S(0));
    if (dstudent_logits) {
      // Through the row softmax: ds = rho_s * (dq - <dq, rho_s>), then the
      // margin map adds ds_j/tau at the neighbor and subtracts the sum at y.
      const S inner = dq.dot(rho_s.row(i).transpose());
      S dsum = 0;
      const int y = labels[static_cast<std::size_t>(i)];
      for (int j = 0; j < nbhd.k; ++j) {
        const S ds = rho_s(i, j) * (dq(j) - inner) / static_cast<S>(n);
        (*dstudent_logits)(i, nbhd.indices(i, j)) += ds / tau_nsd;
        dsum += ds;
      }
      (*dstudent_logits)(i, y) -= dsum / tau_nsd;
    }
  }
  return loss / static_cast<S>(n);
}

/// Global alignment terms of the objective:
///   cls: cross-entropy of student logits against labels
///   vis: 1 - mean cosine(projected student features, teacher features)
///   txt: cross-entropy of (projected features * anchors^T)/tau against labels
/// Fills cls/vis/txt/base of the breakdown; nsd/total are left for
/// total_loss(). Gradients (w.r.t. student logits and the normalized
/// projection) accumulate into the out-params when non-null.
template <class S>
LossBreakdownT<S> base_loss(const StudentOutputT<S>& student, const TeacherOutputT<S>& teacher,
                            const SemanticAnchorsT<S>& anchors, const std::vector<int>& labels,
                            const LossWeightsT<S>& weights, Mat<S>* dlogits = nullptr,
                            Mat<S>* dprojected = nullptr) {
  if (!(weights.tau > S(0))) throw ConfigError("loss tau must be positive");
  const Index n = student.logits.rows();
  LossBreakdownT<S> out;

  Mat<S> dz_cls;
  out.cls = softmax_cross_entropy(student.logits, labels, dlogits ? &dz_cls : nullptr);
  if (!std::isfinite(static_cast<double>(out.cls))) {
    throw NumericError("non-finite value in cls component");
  }

  out.vis = S(1) - (student.projected.array() * teacher.features.array()).rowwise().sum().mean();
  if (!std::isfinite(static_cast<double>(out.vis))) {
    throw NumericError("non-finite value in vis component");
  }

  Mat<S> txt_logits = student.projected * anchors.matrix.transpose() / weights.tau;
  Mat<S> dz_txt;
  out.txt = softmax_cross_entropy(txt_logits, labels, dprojected ? &dz_txt : nullptr);
  if (!std::isfinite(static_cast<double>(out.txt))) {
    throw NumericError("non-finite value in txt component");
  }

  out.base = weights.lambda_cls * out.cls + weights.lambda_vis * out.vis +
             weights.lambda_txt * out.txt;
  out.total = out.base;

  if (dlogits) *dlogits = weights.lambda_cls * dz_cls;
  if (dprojected) {
    *dprojected = -(weights.lambda_vis / static_cast<S>(n)) * teacher.features +
                  (weights.lambda_txt / weights.tau) * (dz_txt * anchors.matrix);
  }
  return out;
}

/// Full objective: total = base + lambda_nsd * nsd. A zero lambda_nsd skips
/// the structural path entirely, so the baseline is the identical code with
/// the NSD branch never taken, not a zero-weighted evaluation of it.
template <class S>
LossBreakdownT<S> total_loss(const StudentOutputT<S>& student, const TeacherOutputT<S>& teacher,
                             const SemanticAnchorsT<S>& anchors, const std::vector<int>& labels,
                             const LossWeightsT<S>& weights, Mat<S>* dlogits = nullptr,
                             Mat<S>* dprojected = nullptr) {
  LossBreakdownT<S> out =
      base_loss(student, teacher, anchors, labels, weights, dlogits, dprojected);
  if (weights.lambda_nsd != S(0)) {
    Mat<S> dz_nsd;
    out.nsd = nsd_loss(teacher.logits, student.logits, labels, weights,
                       dlogits ? &dz_nsd : nullptr);
    out.total = out.base + weights.lambda_nsd * out.nsd;
    if (dlogits) *dlogits += weights.lambda_nsd * dz_nsd;
  }
  return out;
}

}  // namespace pand
