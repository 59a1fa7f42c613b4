#pragma once

#include "pand/anchors.hpp"
#include "pand/core.hpp"
#include "pand/encoders.hpp"

namespace pand {

/// Frozen-teacher batch output: unit-norm image features and their cosine
/// similarities to every anchor. No scale factor enters here; temperatures
/// belong to the losses that need them.
template <class S>
struct TeacherOutputT {
  Mat<S> features;  // N x d, unit rows
  Mat<S> logits;    // N x C, each entry in [-1, 1]
};

using TeacherOutput = TeacherOutputT<float>;

/// logits = features * anchors^T, with the anchors acting as the classifier.
/// Pure function of (inputs, weights); nothing here ever receives gradients.
template <class S>
TeacherOutputT<S> teacher_forward(const EncoderPair<S>& pair,
                                  const SemanticAnchorsT<S>& anchors, const Mat<S>& inputs) {
  if (!anchors.frozen) {
    throw FreezeError("teacher requires frozen anchors");
  }
  TeacherOutputT<S> out;
  out.features = pair.encode_images(inputs);
  if (out.features.cols() != anchors.dim()) {
    throw ShapeError("feature dim " + std::to_string(out.features.cols()) +
                     " vs anchor dim " + std::to_string(anchors.dim()));
  }
  out.logits = out.features * anchors.matrix.transpose();
  return out;
}

/// Same projection for features that are already encoded (the training loop
/// encodes the frozen features once and reuses them every epoch).
template <class S>
Mat<S> anchor_logits(const Mat<S>& features, const SemanticAnchorsT<S>& anchors) {
  if (!anchors.frozen) {
    throw FreezeError("teacher requires frozen anchors");
  }
  if (features.cols() != anchors.dim()) {
    throw ShapeError("feature dim " + std::to_string(features.cols()) + " vs anchor dim " +
                     std::to_string(anchors.dim()));
  }
  return features * anchors.matrix.transpose();
}

}  // namespace pand
