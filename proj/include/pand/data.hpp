#pragma once

#include "pand/core.hpp"

#include <string>
#include <vector>

namespace pand {

/// One ordered split. Sample i is (inputs.row(i), labels[i], ids[i]);
/// ids are unique within the split and stable across reloads.
struct DatasetSplit {
  Mat<float> inputs;
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::vector<std::string> class_names;
  std::string split_name;
  std::vector<std::string> warnings;

  Index size() const { return inputs.rows(); }
  Index num_classes() const { return static_cast<Index>(class_names.size()); }
};

struct ToySplits {
  DatasetSplit train;
  DatasetSplit test;
};

/// Seeded Gaussian clusters around unit-norm class means whose pairwise
/// angles are at least `separation` radians. 80/20 train/test, stratified
/// per class. Throws ConfigError when the separation cannot be met.
ToySplits make_toy(int classes, int per_class, int dim, double separation,
                   double noise, std::uint64_t seed);

/// Directory dataset: `root` holds one subdirectory per class (the vocabulary,
/// in sorted order) and the split file lists `relative/path class name` lines.
/// Each referenced file is parsed as whitespace-separated floats.
DatasetSplit load_image_folder(const std::string& root,
                               const std::string& split_file,
                               const std::string& split_name);

/// Split round-trip through the named-tensor container format.
void save_split(const DatasetSplit& split, const std::string& path);
DatasetSplit load_split(const std::string& path);

/// Seeded shuffled fixed-size batches over [0, n).
class BatchPlan {
 public:
  BatchPlan(Index n, Index batch_size, Rng& rng);
  Index num_batches() const { return static_cast<Index>(batches_.size()); }
  const std::vector<int>& batch(Index b) const { return batches_[static_cast<std::size_t>(b)]; }

 private:
  std::vector<std::vector<int>> batches_;
};

/// Rows of `source` selected by `rows`.
template <class S>
Mat<S> take_rows(const Mat<S>& source, const std::vector<int>& rows) {
  Mat<S> out(static_cast<Index>(rows.size()), source.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = source.row(rows[i]);
  return out;
}

template <class T>
std::vector<T> take(const std::vector<T>& source, const std::vector<int>& rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(source[static_cast<std::size_t>(r)]);
  return out;
}

}  // namespace pand
