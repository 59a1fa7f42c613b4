#pragma once

#include "pand/core.hpp"
#include "pand/student.hpp"

#include <cmath>
#include <vector>

namespace pand {

/// Cosine annealing across epochs: t=0 gives lr0, t=total gives min_lr.
template <class S>
S cosine_lr(Index t, Index total, S lr0, S min_lr) {
  if (total < 1) return lr0;
  const double phase = 3.14159265358979323846 * static_cast<double>(t) / static_cast<double>(total);
  return min_lr + (lr0 - min_lr) * static_cast<S>(0.5 * (1.0 + std::cos(phase)));
}

template <class S>
S global_norm(const std::vector<TensorView<S>>& tensors) {
  S sq = 0;
  for (const auto& t : tensors) {
    for (Index i = 0; i < t.size(); ++i) sq += t.data[i] * t.data[i];
  }
  return std::sqrt(sq);
}

/// Scales all tensors in place so the joint norm is at most max_norm.
/// Returns the pre-clip norm.
template <class S>
S clip_global_norm(std::vector<TensorView<S>>& tensors, S max_norm) {
  const S norm = global_norm(tensors);
  if (max_norm > S(0) && norm > max_norm) {
    const S scale = max_norm / norm;
    for (auto& t : tensors) {
      for (Index i = 0; i < t.size(); ++i) t.data[i] *= scale;
    }
  }
  return norm;
}

/// Adam with decoupled weight decay. Moments are stored per tensor in the
/// order the views were given at construction and are exposed so checkpoints
/// can persist and restore the optimizer mid-run.
template <class S>
class AdamW {
 public:
  AdamW(const std::vector<TensorView<S>>& params, S weight_decay, S beta1 = S(0.9),
        S beta2 = S(0.999), S eps = S(1e-8))
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params) {
      m_.push_back(Vec<S>::Zero(p.size()));
      v_.push_back(Vec<S>::Zero(p.size()));
    }
  }

  void step(std::vector<TensorView<S>>& params, const std::vector<TensorView<S>>& grads, S lr) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw ShapeError("optimizer built for " + std::to_string(m_.size()) + " tensors, got " +
                       std::to_string(params.size()) + " params / " +
                       std::to_string(grads.size()) + " grads");
    }
    ++step_count_;
    const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(step_count_));
    const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(step_count_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Vec<S>& m = m_[p];
      Vec<S>& v = v_[p];
      S* w = params[p].data;
      const S* g = grads[p].data;
      for (Index i = 0; i < params[p].size(); ++i) {
        m(i) = beta1_ * m(i) + (S(1) - beta1_) * g[i];
        v(i) = beta2_ * v(i) + (S(1) - beta2_) * g[i] * g[i];
        const S mhat = m(i) / bc1;
        const S vhat = v(i) / bc2;
        w[i] -= lr * weight_decay_ * w[i] + lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  long long step_count() const { return step_count_; }
  void set_step_count(long long t) { step_count_ = t; }
  std::vector<Vec<S>>& moments_m() { return m_; }
  std::vector<Vec<S>>& moments_v() { return v_; }

 private:
  S weight_decay_, beta1_, beta2_, eps_;
  long long step_count_ = 0;
  std::vector<Vec<S>> m_;
  std::vector<Vec<S>> v_;
};

}  // namespace pand
