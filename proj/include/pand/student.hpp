#pragma once

#include "pand/core.hpp"

#include <string>
#include <vector>

namespace pand {

/// Mutable view over one parameter tensor, used by the optimizers and the
/// checkpoint writer so they can iterate a model generically.
template <class S>
struct TensorView {
  std::string name;
  S* data;
  Index rows;
  Index cols;

  Index size() const { return rows * cols; }
};

/// One forward pass, with enough intermediates cached for the reverse pass.
template <class S>
struct StudentOutputT {
  Mat<S> hidden_pre;     // N x hidden, before ReLU
  Mat<S> features;       // N x d_s (f_S)
  Mat<S> logits;         // N x C
  Mat<S> projected_raw;  // N x d, before normalization
  Vec<S> proj_norms;     // N
  Mat<S> projected;      // N x d, unit rows
};

using StudentOutput = StudentOutputT<float>;

template <class S>
struct StudentGrads {
  Mat<S> w1, w2, fc_w, proj_w;
  Vec<S> b1, b2, fc_b, proj_b;

  std::vector<TensorView<S>> views() {
    return {{"w1", w1.data(), w1.rows(), w1.cols()},
            {"b1", b1.data(), b1.size(), 1},
            {"w2", w2.data(), w2.rows(), w2.cols()},
            {"b2", b2.data(), b2.size(), 1},
            {"fc_w", fc_w.data(), fc_w.rows(), fc_w.cols()},
            {"fc_b", fc_b.data(), fc_b.size(), 1},
            {"proj_w", proj_w.data(), proj_w.rows(), proj_w.cols()},
            {"proj_b", proj_b.data(), proj_b.size(), 1}};
  }
};

/// Lightweight student: two-layer ReLU backbone to d_s features, an FC
/// classification head, and an affine projector into the teacher's
/// d-dimensional space (normalized rows feed the alignment losses; raw
/// features feed the FC head).
template <class S>
class StudentModel {
 public:
  StudentModel(Index input_dim, Index hidden_dim, Index feature_dim, Index num_classes,
               Index anchor_dim, std::uint64_t seed)
      : input_dim_(input_dim),
        hidden_dim_(hidden_dim),
        feature_dim_(feature_dim),
        num_classes_(num_classes),
        anchor_dim_(anchor_dim) {
    if (input_dim < 1 || hidden_dim < 1 || feature_dim < 1 || num_classes < 2 || anchor_dim < 1) {
      throw ConfigError("student dims must be positive (and classes >= 2)");
    }
    Rng rng(seed);
    w1_ = rng.template gaussian_mat<S>(hidden_dim, input_dim, 0.02);
    b1_ = Vec<S>::Zero(hidden_dim);
    w2_ = rng.template gaussian_mat<S>(feature_dim, hidden_dim, 0.02);
    b2_ = Vec<S>::Zero(feature_dim);
    fc_w_ = rng.template gaussian_mat<S>(num_classes, feature_dim, 0.02);
    fc_b_ = Vec<S>::Zero(num_classes);
    proj_w_ = rng.template gaussian_mat<S>(anchor_dim, feature_dim, 0.02);
    proj_b_ = Vec<S>::Zero(anchor_dim);
  }

  Index input_dim() const { return input_dim_; }
  Index num_classes() const { return num_classes_; }
  Index anchor_dim() const { return anchor_dim_; }

  StudentOutputT<S> forward(const Mat<S>& inputs) const {
    if (inputs.cols() != input_dim_) {
      throw ShapeError("student input dim " + std::to_string(inputs.cols()) + " vs expected " +
                       std::to_string(input_dim_));
    }
    StudentOutputT<S> out;
    out.hidden_pre = (inputs * w1_.transpose()).rowwise() + b1_.transpose();
    Mat<S> hidden = out.hidden_pre.cwiseMax(S(0));
    out.features = (hidden * w2_.transpose()).rowwise() + b2_.transpose();
    out.logits = (out.features * fc_w_.transpose()).rowwise() + fc_b_.transpose();
    out.projected_raw = (out.features * proj_w_.transpose()).rowwise() + proj_b_.transpose();
    out.proj_norms = out.projected_raw.rowwise().norm();
    for (Index i = 0; i < out.proj_norms.size(); ++i) {
      if (!(out.proj_norms(i) > S(0))) {
        throw NumericError("student projection " + std::to_string(i) + " has zero norm");
      }
    }
    out.projected = out.projected_raw;
    out.projected.array().colwise() /= out.proj_norms.array();
    return out;
  }

  /// Backpropagates upstream gradients w.r.t. the logits and the normalized
  /// projection through the whole model.
  StudentGrads<S> backward(const Mat<S>& inputs, const StudentOutputT<S>& out,
                           const Mat<S>& dlogits, const Mat<S>& dprojected) const {
    StudentGrads<S> g;
    // Undo the row normalization: draw = (dp - p_hat <dp, p_hat>) / norm.
    Vec<S> dots = (dprojected.array() * out.projected.array()).rowwise().sum().matrix();
    Mat<S> draw = dprojected - (out.projected.array().colwise() * dots.array()).matrix();
    draw.array().colwise() /= out.proj_norms.array();

    g.fc_w = dlogits.transpose() * out.features;
    g.fc_b = dlogits.colwise().sum().transpose();
    g.proj_w = draw.transpose() * out.features;
    g.proj_b = draw.colwise().sum().transpose();

    Mat<S> dfeat = dlogits * fc_w_ + draw * proj_w_;
    Mat<S> hidden = out.hidden_pre.cwiseMax(S(0));
    g.w2 = dfeat.transpose() * hidden;
    g.b2 = dfeat.colwise().sum().transpose();

    Mat<S> dhidden =
        ((dfeat * w2_).array() * (out.hidden_pre.array() > S(0)).template cast<S>()).matrix();
    g.w1 = dhidden.transpose() * inputs;
    g.b1 = dhidden.colwise().sum().transpose();
    return g;
  }

  std::vector<TensorView<S>> params() {
    return {{"w1", w1_.data(), w1_.rows(), w1_.cols()},
            {"b1", b1_.data(), b1_.size(), 1},
            {"w2", w2_.data(), w2_.rows(), w2_.cols()},
            {"b2", b2_.data(), b2_.size(), 1},
            {"fc_w", fc_w_.data(), fc_w_.rows(), fc_w_.cols()},
            {"fc_b", fc_b_.data(), fc_b_.size(), 1},
            {"proj_w", proj_w_.data(), proj_w_.rows(), proj_w_.cols()},
            {"proj_b", proj_b_.data(), proj_b_.size(), 1}};
  }

  Index param_count() const {
    return w1_.size() + b1_.size() + w2_.size() + b2_.size() + fc_w_.size() + fc_b_.size() +
           proj_w_.size() + proj_b_.size();
  }

  std::uint64_t weight_hash() const {
    std::uint64_t h = hash_bytes(w1_);
    h = hash_bytes(b1_, h);
    h = hash_bytes(w2_, h);
    h = hash_bytes(b2_, h);
    h = hash_bytes(fc_w_, h);
    h = hash_bytes(fc_b_, h);
    h = hash_bytes(proj_w_, h);
    h = hash_bytes(proj_b_, h);
    return h;
  }

 private:
  Index input_dim_, hidden_dim_, feature_dim_, num_classes_, anchor_dim_;
  Mat<S> w1_;      // hidden x input
  Vec<S> b1_;      // hidden
  Mat<S> w2_;      // d_s x hidden
  Vec<S> b2_;      // d_s
  Mat<S> fc_w_;    // C x d_s
  Vec<S> fc_b_;    // C
  Mat<S> proj_w_;  // d x d_s
  Vec<S> proj_b_;  // d
};

}  // namespace pand
