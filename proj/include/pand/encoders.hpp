#pragma once

#include "pand/core.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace pand {

/// Intermediates of one text-encoder forward pass, kept so the pass can be
/// replayed backwards for prompt gradients. Token values themselves are not
/// needed: everything the reverse pass touches is derived state.
template <class S>
struct TextCache {
  Vec<S> query;   // d_tok, from the final (class-name) token
  Mat<S> keys;    // n_tokens x d_tok
  Vec<S> attn;    // n_tokens, softmax over scaled scores
  Mat<S> values;  // n_tokens x d_tok
};

/// Frozen image/text encoder pair. Image side maps raw inputs to unit-norm
/// d-dimensional features; text side maps a prompt token matrix to a raw
/// (un-normalized) d-dimensional feature, with a hand-written reverse pass
/// so prompt-only optimization never touches encoder weights.
template <class S>
class EncoderPair {
 public:
  virtual ~EncoderPair() = default;

  virtual Index feature_dim() const = 0;
  virtual Index token_dim() const = 0;

  /// N x input_dim -> N x d, rows unit-norm.
  virtual Mat<S> encode_images(const Mat<S>& inputs) const = 0;

  /// (n_tokens x d_tok) prompt -> raw d-vector; fills *cache when non-null.
  virtual Vec<S> encode_text(const Mat<S>& prompt, TextCache<S>* cache = nullptr) const = 0;

  /// Gradient of <upstream, encode_text(prompt)> w.r.t. the prompt tokens.
  virtual Mat<S> encode_text_vjp(const TextCache<S>& cache, const Vec<S>& upstream) const = 0;

  /// Covers every weight tensor; must be stable across calls (frozen contract).
  virtual std::uint64_t weight_hash() const = 0;

  bool trainable() const { return false; }
};

/// Desk-scale stand-in for a pretrained VLM.
///
/// Image tower: seeded linear map + row normalization. Text tower: the last
/// token (the class name) queries an attention pool over the whole prompt,
/// so learned context tokens can steer each class feature individually, then
/// a readout lifts the pooled token into image-feature space. The readout is
/// "pretrained" by pretrain_alignment(): an associative map from pooled
/// class-name/template token directions onto image class-mean directions,
/// which is what gives hand-written prompts nontrivial zero-shot accuracy
/// before any calibration.
template <class S>
class ToyVlm : public EncoderPair<S> {
 public:
  ToyVlm(Index input_dim, Index feature_dim, Index token_dim, std::uint64_t seed)
      : input_dim_(input_dim), feature_dim_(feature_dim), token_dim_(token_dim) {
    if (input_dim < 1 || feature_dim < 1 || token_dim < 1) {
      throw ConfigError("encoder dims must be positive");
    }
    Rng rng(seed);
    image_proj_ = rng.template gaussian_mat<S>(feature_dim, input_dim,
                                               1.0 / std::sqrt(static_cast<double>(input_dim)));
    const double tok_sigma = 1.0 / std::sqrt(static_cast<double>(token_dim));
    query_proj_ = rng.template gaussian_mat<S>(token_dim, token_dim, tok_sigma);
    key_proj_ = rng.template gaussian_mat<S>(token_dim, token_dim, tok_sigma);
    value_proj_ = rng.template gaussian_mat<S>(token_dim, token_dim, tok_sigma);
    text_readout_ = Mat<S>::Zero(feature_dim, token_dim);
  }

  Index input_dim() const { return input_dim_; }
  Index feature_dim() const override { return feature_dim_; }
  Index token_dim() const override { return token_dim_; }

  Mat<S> encode_images(const Mat<S>& inputs) const override {
    if (inputs.cols() != input_dim_) {
      throw ShapeError("image input dim " + std::to_string(inputs.cols()) +
                       " vs encoder input dim " + std::to_string(input_dim_));
    }
    Mat<S> f = inputs * image_proj_.transpose();
    for (Index i = 0; i < f.rows(); ++i) {
      const S n = f.row(i).norm();
      if (!(n > S(0))) {
        throw NumericError("image feature " + std::to_string(i) + " has zero norm");
      }
      f.row(i) /= n;
    }
    return f;
  }

  Vec<S> encode_text(const Mat<S>& prompt, TextCache<S>* cache = nullptr) const override {
    if (prompt.cols() != token_dim_) {
      throw ShapeError("prompt token dim " + std::to_string(prompt.cols()) +
                       " vs encoder token dim " + std::to_string(token_dim_));
    }
    if (prompt.rows() < 1) throw ShapeError("prompt must contain at least one token");
    const S scale = S(1) / std::sqrt(static_cast<S>(token_dim_));
    Vec<S> query = query_proj_ * prompt.row(prompt.rows() - 1).transpose();
    Mat<S> keys = prompt * key_proj_.transpose();
    Vec<S> scores = keys * query * scale;
    Vec<S> attn = (scores.array() - scores.maxCoeff()).exp();
    attn /= attn.sum();
    Mat<S> values = prompt * value_proj_.transpose();
    Vec<S> pooled = values.transpose() * attn;
    Vec<S> out = text_readout_ * pooled;
    if (cache) {
      cache->query = std::move(query);
      cache->keys = std::move(keys);
      cache->attn = std::move(attn);
      cache->values = std::move(values);
    }
    return out;
  }

  Mat<S> encode_text_vjp(const TextCache<S>& cache, const Vec<S>& upstream) const override {
    const Index n = cache.keys.rows();
    const S scale = S(1) / std::sqrt(static_cast<S>(token_dim_));
    const Vec<S> gh = text_readout_.transpose() * upstream;
    // Value path: token j received weight attn_j in the pooled vector.
    const Vec<S> value_pull = value_proj_.transpose() * gh;
    Mat<S> grad = cache.attn * value_pull.transpose();
    // Attention path: softmax reverse over the scores.
    const Vec<S> per_token = cache.values * gh;
    const Vec<S> dscore =
        cache.attn.array() * (per_token.array() - cache.attn.dot(per_token));
    const Vec<S> key_pull = key_proj_.transpose() * cache.query * scale;
    grad += dscore * key_pull.transpose();
    // Query path lands on the final token only.
    const Vec<S> dquery = cache.keys.transpose() * dscore * scale;
    grad.row(n - 1) += (query_proj_.transpose() * dquery).transpose();
    return grad;
  }

  /// Builds the associative readout from class-labelled image features and
  /// per-class token stacks (typically the bare name token plus the filled
  /// hand-written template token). Each token contributes an outer product
  /// of the class's mean image direction with its normalized value
  /// projection. Call once, before anything depends on weight_hash().
  void pretrain_alignment(const Mat<S>& image_features, const std::vector<int>& labels,
                          const std::vector<Mat<S>>& class_tokens) {
    const Index c = static_cast<Index>(class_tokens.size());
    if (image_features.rows() != static_cast<Index>(labels.size())) {
      throw ShapeError("feature rows " + std::to_string(image_features.rows()) +
                       " vs label count " + std::to_string(labels.size()));
    }
    text_readout_.setZero();
    for (Index cls = 0; cls < c; ++cls) {
      Vec<S> mean = Vec<S>::Zero(feature_dim_);
      Index count = 0;
      for (Index i = 0; i < image_features.rows(); ++i) {
        if (labels[static_cast<std::size_t>(i)] == cls) {
          mean += image_features.row(i).transpose();
          ++count;
        }
      }
      if (count == 0) {
        throw ConfigError("alignment pretraining saw no samples for class " +
                          std::to_string(cls));
      }
      mean /= mean.norm();
      const Mat<S>& tokens = class_tokens[static_cast<std::size_t>(cls)];
      for (Index t = 0; t < tokens.rows(); ++t) {
        Vec<S> rep = value_proj_ * tokens.row(t).transpose();
        rep /= rep.norm();
        text_readout_ += mean * rep.transpose();
      }
    }
  }

  std::uint64_t weight_hash() const override {
    std::uint64_t h = hash_bytes(image_proj_);
    h = hash_bytes(query_proj_, h);
    h = hash_bytes(key_proj_, h);
    h = hash_bytes(value_proj_, h);
    h = hash_bytes(text_readout_, h);
    return h;
  }

 private:
  Index input_dim_;
  Index feature_dim_;
  Index token_dim_;
  Mat<S> image_proj_;    // feature_dim x input_dim
  Mat<S> query_proj_;    // token_dim x token_dim
  Mat<S> key_proj_;      // token_dim x token_dim
  Mat<S> value_proj_;    // token_dim x token_dim
  Mat<S> text_readout_;  // feature_dim x token_dim
};

}  // namespace pand
