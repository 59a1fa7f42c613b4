#pragma once

#include "pand/core.hpp"
#include "pand/data.hpp"
#include "pand/encoders.hpp"

#include <cmath>
#include <set>
#include <string>
#include <vector>

namespace pand {

/// Learnable context prefix shared by every class prompt.
template <class S>
struct ContextTokensT {
  Mat<S> vectors;  // n_ctx x d_tok

  Index n_ctx() const { return vectors.rows(); }

  /// Zero-mean Gaussian init, sigma 0.02.
  static ContextTokensT seeded(Index n_ctx, Index d_tok, std::uint64_t seed) {
    if (n_ctx < 1) throw ConfigError("n_ctx must be at least 1");
    Rng rng(seed);
    return ContextTokensT{rng.template gaussian_mat<S>(n_ctx, d_tok, 0.02)};
  }
};

/// Fixed class-name embeddings. Desk-scale tokenization: every name (or
/// filled template string) maps to one deterministic token drawn from an
/// RNG seeded by the hash of the string, so no tokenizer is needed and two
/// runs always agree on the vocabulary.
template <class S>
struct ClassVocabularyT {
  std::vector<std::string> names;
  std::vector<Mat<S>> embeddings;  // per class: n_tokens x d_tok

  Index num_classes() const { return static_cast<Index>(names.size()); }

  static ClassVocabularyT hashed(const std::vector<std::string>& names, Index d_tok,
                                 std::uint64_t seed) {
    return build(names, names, d_tok, seed);
  }

  /// Replaces "[CLASS]" in the template with each name and hashes the filled
  /// string; `names` is kept as the class labels.
  static ClassVocabularyT from_template(const std::string& tmpl,
                                        const std::vector<std::string>& names, Index d_tok,
                                        std::uint64_t seed) {
    std::vector<std::string> filled;
    filled.reserve(names.size());
    for (const auto& name : names) {
      std::string s = tmpl;
      const auto pos = s.find("[CLASS]");
      if (pos == std::string::npos) {
        throw ConfigError("prompt template must contain [CLASS]: " + tmpl);
      }
      s.replace(pos, 7, name);
      filled.push_back(std::move(s));
    }
    return build(names, filled, d_tok, seed);
  }

 private:
  static ClassVocabularyT build(const std::vector<std::string>& names,
                                const std::vector<std::string>& texts, Index d_tok,
                                std::uint64_t seed) {
    if (names.size() < 2) throw ConfigError("vocabulary needs at least 2 classes");
    std::set<std::string> unique(names.begin(), names.end());
    if (unique.size() != names.size()) throw ConfigError("class names must be unique");
    ClassVocabularyT vocab;
    vocab.names = names;
    const double sigma = 1.0 / std::sqrt(static_cast<double>(d_tok));
    for (const auto& text : texts) {
      Rng rng(fnv1a64(text) ^ seed);
      vocab.embeddings.push_back(rng.template gaussian_mat<S>(1, d_tok, sigma));
    }
    return vocab;
  }
};

/// Per-class unit-norm text features; the teacher's classifier rows.
template <class S>
struct SemanticAnchorsT {
  Mat<S> matrix;  // C x d, unit rows
  std::vector<std::string> class_names;
  bool frozen = false;

  Index num_classes() const { return matrix.rows(); }
  Index dim() const { return matrix.cols(); }
};

using SemanticAnchors = SemanticAnchorsT<float>;

/// [v_1..v_nctx, w_c] as one token matrix. The context portion is copied
/// here; gradients reach the live ContextTokens because the reverse pass
/// slices the first n_ctx rows of the prompt gradient back out.
template <class S>
Mat<S> assemble_prompt(const ContextTokensT<S>& ctx, const ClassVocabularyT<S>& vocab,
                       Index class_index) {
  if (class_index < 0 || class_index >= vocab.num_classes()) {
    throw IndexError("class index " + std::to_string(class_index) + " out of range for " +
                     std::to_string(vocab.num_classes()) + " classes");
  }
  const Mat<S>& name = vocab.embeddings[static_cast<std::size_t>(class_index)];
  Mat<S> prompt(ctx.n_ctx() + name.rows(), ctx.vectors.cols());
  prompt.topRows(ctx.n_ctx()) = ctx.vectors;
  prompt.bottomRows(name.rows()) = name;
  return prompt;
}

/// encode_anchors plus everything needed to push gradients back to the
/// context tokens: per-class text caches and pre-normalization norms.
template <class S>
struct AnchorForward {
  SemanticAnchorsT<S> anchors;
  std::vector<TextCache<S>> caches;
  Vec<S> norms;
};

template <class S>
AnchorForward<S> encode_anchors_fwd(const EncoderPair<S>& pair, const ContextTokensT<S>& ctx,
                                    const ClassVocabularyT<S>& vocab) {
  const Index c = vocab.num_classes();
  AnchorForward<S> fwd;
  fwd.anchors.matrix.resize(c, pair.feature_dim());
  fwd.anchors.class_names = vocab.names;
  fwd.caches.resize(static_cast<std::size_t>(c));
  fwd.norms.resize(c);
  for (Index cls = 0; cls < c; ++cls) {
    Vec<S> raw = pair.encode_text(assemble_prompt(ctx, vocab, cls),
                                  &fwd.caches[static_cast<std::size_t>(cls)]);
    const S n = raw.norm();
    if (!(n > S(0)) || !std::isfinite(static_cast<double>(n))) {
      throw NumericError("text feature for class " + std::to_string(cls) +
                         " cannot be normalized");
    }
    fwd.anchors.matrix.row(cls) = raw.transpose() / n;
    fwd.norms(cls) = n;
  }
  return fwd;
}

template <class S>
SemanticAnchorsT<S> encode_anchors(const EncoderPair<S>& pair, const ContextTokensT<S>& ctx,
                                   const ClassVocabularyT<S>& vocab) {
  return encode_anchors_fwd(pair, ctx, vocab).anchors;
}

/// Chains a gradient w.r.t. the normalized anchor rows through normalization
/// and the text encoder, accumulating on the shared context prefix.
template <class S>
Mat<S> anchors_context_grad(const EncoderPair<S>& pair, const AnchorForward<S>& fwd,
                            const Mat<S>& danchors, Index n_ctx) {
  Mat<S> grad = Mat<S>::Zero(n_ctx, pair.token_dim());
  for (Index cls = 0; cls < fwd.anchors.num_classes(); ++cls) {
    const Vec<S> u = danchors.row(cls).transpose();
    const Vec<S> a = fwd.anchors.matrix.row(cls).transpose();
    const Vec<S> draw = (u - a * a.dot(u)) / fwd.norms(cls);
    grad += pair.encode_text_vjp(fwd.caches[static_cast<std::size_t>(cls)], draw)
                .topRows(n_ctx);
  }
  return grad;
}

/// Mean cross-entropy of image-to-anchor similarities at temperature tau
/// (the image->text direction). With `symmetric`, the transposed
/// anchor-to-image term (softmax over the batch per class) is averaged in
/// 50/50. `danchors`, when non-null, receives the gradient w.r.t. the
/// normalized anchor matrix.
template <class S>
S calibration_loss(const Mat<S>& image_feats, const SemanticAnchorsT<S>& anchors,
                   const std::vector<int>& labels, S temperature,
                   Mat<S>* danchors = nullptr, bool symmetric = false) {
  if (!(temperature > S(0))) {
    throw ConfigError("calibration temperature must be positive, got " +
                      std::to_string(static_cast<double>(temperature)));
  }
  const Index n = image_feats.rows();
  const Index c = anchors.num_classes();
  if (image_feats.cols() != anchors.dim()) {
    throw ShapeError("feature dim " + std::to_string(image_feats.cols()) + " vs anchor dim " +
                     std::to_string(anchors.dim()));
  }
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      throw IndexError("label " + std::to_string(y) + " out of range for " +
                       std::to_string(c) + " classes");
    }
  }
  Mat<S> z = image_feats * anchors.matrix.transpose() / temperature;
  if (!all_finite(z)) throw NumericError("non-finite similarity in calibration loss");

  Mat<S> dz;
  S loss = softmax_cross_entropy(z, labels, danchors ? &dz : nullptr);
  if (symmetric) {
    // Per class, softmax over the batch dimension; every image is the
    // positive of its own class column.
    Vec<S> col_max = z.colwise().maxCoeff();
    Mat<S> e = (z.rowwise() - col_max.transpose()).array().exp();
    Vec<S> col_sum = e.colwise().sum();
    S t2i = 0;
    for (Index i = 0; i < n; ++i) {
      const int y = labels[static_cast<std::size_t>(i)];
      t2i += std::log(col_sum(y)) - (z(i, y) - col_max(y));
    }
    t2i /= static_cast<S>(n);
    loss = (loss + t2i) / S(2);
    if (danchors) {
      Vec<S> class_count = Vec<S>::Zero(c);
      for (int y : labels) class_count(y) += S(1);
      Mat<S> q = e;
      q.array().rowwise() /= col_sum.transpose().array();
      Mat<S> dz_t2i = q.array().rowwise() * class_count.transpose().array();
      for (Index i = 0; i < n; ++i) dz_t2i(i, labels[static_cast<std::size_t>(i)]) -= S(1);
      dz = (dz + dz_t2i / static_cast<S>(n)) / S(2);
    }
  }
  if (danchors) *danchors = dz.transpose() * image_feats / temperature;
  return loss;
}

// ---------------------------------------------------------------------------
// Stage-PSC training loop: SGD with momentum on the context tokens only.

struct PscSettings {
  double lr = 0.002;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int epochs = 200;
  int batch_size = 128;
  double tau = 0.07;
  Index n_ctx = 16;
  bool symmetric = false;
  double grad_clip = 5.0;  // global-norm cap; <= 0 disables
  std::uint64_t seed = 0;
};

template <class S>
struct PscResult {
  SemanticAnchorsT<S> anchors;
  Mat<S> context;  // final context tokens, for inspection
  std::vector<S> epoch_loss;
};

/// Optimizes context tokens against the frozen pair, re-encoding anchors
/// every step, and returns the final anchors with frozen = true. Everything
/// else (encoder weights, vocabulary) is read-only throughout.
template <class S>
PscResult<S> run_psc(const PscSettings& st, const DatasetSplit& data,
                     const EncoderPair<S>& pair, const ClassVocabularyT<S>& vocab) {
  if (st.epochs < 0) throw ConfigError("psc.epochs must be non-negative");
  if (st.batch_size < 1) throw ConfigError("psc.batch_size must be positive");
  if (st.n_ctx < 1) throw ConfigError("n_ctx must be at least 1");
  // One stream drives both the context init and every epoch's batch order.
  Rng rng(st.seed);
  ContextTokensT<S> ctx{rng.template gaussian_mat<S>(st.n_ctx, pair.token_dim(), 0.02)};

  const Mat<S> feats = pair.encode_images(data.inputs.cast<S>());
  PscResult<S> result;
  Mat<S> velocity = Mat<S>::Zero(st.n_ctx, pair.token_dim());

  for (int epoch = 0; epoch < st.epochs; ++epoch) {
    BatchPlan plan(data.size(), st.batch_size, rng);
    S epoch_sum = 0;
    for (Index b = 0; b < plan.num_batches(); ++b) {
      const std::vector<int>& sel = plan.batch(b);
      AnchorForward<S> fwd = encode_anchors_fwd(pair, ctx, vocab);
      Mat<S> danchors;
      const S loss = calibration_loss<S>(take_rows(feats, sel), fwd.anchors,
                                         take(data.labels, sel), static_cast<S>(st.tau),
                                         &danchors, st.symmetric);
      if (!std::isfinite(static_cast<double>(loss))) {
        throw NumericError("calibration loss diverged at epoch " + std::to_string(epoch));
      }
      Mat<S> grad = anchors_context_grad(pair, fwd, danchors, st.n_ctx);
      if (st.weight_decay > 0) grad += static_cast<S>(st.weight_decay) * ctx.vectors;
      if (st.grad_clip > 0) {
        const S norm = grad.norm();
        if (norm > static_cast<S>(st.grad_clip)) grad *= static_cast<S>(st.grad_clip) / norm;
      }
      velocity = static_cast<S>(st.momentum) * velocity + grad;
      ctx.vectors -= static_cast<S>(st.lr) * velocity;
      epoch_sum += loss;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<S>(plan.num_batches()));
  }

  result.anchors = encode_anchors(pair, ctx, vocab);
  result.anchors.frozen = true;
  result.context = ctx.vectors;
  return result;
}

/// Hand-written-prompt anchors: each class encoded from the single filled
/// template token, no learnable context. Used as the ablation baseline.
template <class S>
SemanticAnchorsT<S> fixed_template_anchors(const EncoderPair<S>& pair,
                                           const ClassVocabularyT<S>& template_vocab) {
  const Index c = template_vocab.num_classes();
  SemanticAnchorsT<S> anchors;
  anchors.matrix.resize(c, pair.feature_dim());
  anchors.class_names = template_vocab.names;
  for (Index cls = 0; cls < c; ++cls) {
    Vec<S> raw = pair.encode_text(template_vocab.embeddings[static_cast<std::size_t>(cls)]);
    const S n = raw.norm();
    if (!(n > S(0)) || !std::isfinite(static_cast<double>(n))) {
      throw NumericError("text feature for class " + std::to_string(cls) +
                         " cannot be normalized");
    }
    anchors.matrix.row(cls) = raw.transpose() / n;
  }
  anchors.frozen = true;
  return anchors;
}

// Anchor file round-trip (PANDANCH format); float32 on disk.
void save_anchors(const SemanticAnchors& anchors, const std::string& path);
SemanticAnchors load_anchors(const std::string& path);

}  // namespace pand
