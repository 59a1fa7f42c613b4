#include "pand/data.hpp"

#include "pand/container.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace pand {

namespace {

/// Unit-norm class means with pairwise angle >= separation, by rejection.
Mat<float> sample_class_means(int classes, int dim, double separation, Rng& rng) {
  const double cos_max = std::cos(separation);
  Mat<float> means(classes, dim);
  const int max_tries = 20000;
  for (int c = 0; c < classes; ++c) {
    int tries = 0;
    while (true) {
      if (++tries > max_tries) {
        throw ConfigError("toy dataset: separation " + std::to_string(separation) +
                          " rad infeasible for " + std::to_string(classes) +
                          " classes in dim " + std::to_string(dim));
      }
      Vec<float> v = rng.gaussian_vec<float>(dim, 1.0);
      const float norm = v.norm();
      if (norm < 1e-12f) continue;
      v /= norm;
      bool ok = true;
      for (int p = 0; p < c && ok; ++p) {
        if (means.row(p).dot(v.transpose()) > cos_max) ok = false;
      }
      if (ok) {
        means.row(c) = v.transpose();
        break;
      }
    }
  }
  return means;
}

DatasetSplit assemble_split(const Mat<float>& inputs, const std::vector<int>& labels,
                            const std::vector<std::string>& ids,
                            const std::vector<std::string>& class_names,
                            const std::string& split_name, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(inputs.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  DatasetSplit split;
  split.inputs = take_rows(inputs, order);
  split.labels = take(labels, order);
  split.ids = take(ids, order);
  split.class_names = class_names;
  split.split_name = split_name;
  return split;
}

}  // namespace

ToySplits make_toy(int classes, int per_class, int dim, double separation,
                   double noise, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("toy dataset: need at least 2 classes");
  if (dim < 2) throw ConfigError("toy dataset: need dim >= 2");
  if (separation <= 0) throw ConfigError("toy dataset: separation must be positive");
  if (per_class < 2) throw ConfigError("toy dataset: need at least 2 samples per class");

  Rng rng(seed);
  Mat<float> means = sample_class_means(classes, dim, separation, rng);

  std::vector<std::string> class_names;
  class_names.reserve(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) class_names.push_back("class_" + std::to_string(c));

  const int per_test = std::max(1, per_class / 5);  // 80/20, at least one held out
  const int per_train = per_class - per_test;

  Mat<float> train_x(classes * per_train, dim), test_x(classes * per_test, dim);
  std::vector<int> train_y, test_y;
  std::vector<std::string> train_ids, test_ids;
  Index tr = 0, te = 0;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Vec<float> x = means.row(c).transpose() + rng.gaussian_vec<float>(dim, noise);
      const std::string id = "toy-" + std::to_string(c) + "-" + std::to_string(i);
      if (i < per_train) {
        train_x.row(tr++) = x.transpose();
        train_y.push_back(c);
        train_ids.push_back(id);
      } else {
        test_x.row(te++) = x.transpose();
        test_y.push_back(c);
        test_ids.push_back(id);
      }
    }
  }

  ToySplits out;
  out.train = assemble_split(train_x, train_y, train_ids, class_names, "train", rng);
  out.test = assemble_split(test_x, test_y, test_ids, class_names, "test", rng);
  return out;
}

DatasetSplit load_image_folder(const std::string& root, const std::string& split_file,
                               const std::string& split_name) {
  if (!fs::is_directory(root)) throw IngestError("dataset root is not a directory: " + root);

  std::vector<std::string> class_names;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_names.push_back(entry.path().filename().string());
  }
  std::sort(class_names.begin(), class_names.end());
  if (class_names.size() < 2) throw IngestError("dataset root " + root + " holds fewer than 2 class directories");

  std::ifstream in(split_file, std::ios::binary);
  if (!in) throw IngestError("cannot open split file: " + split_file);

  std::vector<Vec<float>> rows;
  DatasetSplit split;
  split.class_names = class_names;
  split.split_name = split_name;

  std::string line;
  int lineno = 0;
  Index dim = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t space = line.find(' ');
    if (space == std::string::npos) {
      throw IngestError("split file " + split_file + " line " + std::to_string(lineno) +
                        ": expected '<path> <class name>'");
    }
    const std::string rel = line.substr(0, space);
    const std::string cls = line.substr(space + 1);

    const auto it = std::find(class_names.begin(), class_names.end(), cls);
    if (it == class_names.end()) {
      throw IngestError("split file " + split_file + " line " + std::to_string(lineno) +
                        ": unknown class directory '" + cls + "'");
    }

    const fs::path file = fs::path(root) / rel;
    std::ifstream fin(file, std::ios::binary);
    if (!fin) throw IngestError("sample file missing: " + file.string());
    std::vector<float> vals;
    double v;
    while (fin >> v) vals.push_back(static_cast<float>(v));
    if (vals.empty()) throw IngestError("sample file holds no numbers: " + file.string());
    if (dim == -1) dim = static_cast<Index>(vals.size());
    if (static_cast<Index>(vals.size()) != dim) {
      throw IngestError("sample file " + file.string() + ": expected " + std::to_string(dim) +
                        " values, got " + std::to_string(vals.size()));
    }

    Vec<float> row(dim);
    for (Index i = 0; i < dim; ++i) row(i) = vals[static_cast<std::size_t>(i)];
    rows.push_back(std::move(row));
    split.labels.push_back(static_cast<int>(it - class_names.begin()));
    split.ids.push_back(rel);
  }
  if (rows.empty()) throw IngestError("split file lists no samples: " + split_file);

  split.inputs.resize(static_cast<Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) split.inputs.row(static_cast<Index>(i)) = rows[i].transpose();

  // Classes with a directory but no referenced samples stay in the vocabulary.
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    if (std::find(split.labels.begin(), split.labels.end(), static_cast<int>(c)) == split.labels.end()) {
      split.warnings.push_back("class '" + class_names[c] + "' has no samples in " + split_name);
    }
  }
  return split;
}

void save_split(const DatasetSplit& split, const std::string& path) {
  Container c;
  c.tensors.push_back({"inputs", split.inputs});
  Mat<float> labels(split.size(), 1);
  for (Index i = 0; i < split.size(); ++i) labels(i, 0) = static_cast<float>(split.labels[static_cast<std::size_t>(i)]);
  c.tensors.push_back({"labels", labels});

  std::string meta = "split " + split.split_name + "\n";
  for (const auto& name : split.class_names) meta += "class " + name + "\n";
  for (const auto& id : split.ids) meta += "id " + id + "\n";
  c.meta = meta;
  save_container(path, c);
}

DatasetSplit load_split(const std::string& path) {
  Container c = load_container(path);
  DatasetSplit split;
  split.inputs = c.find("inputs");
  const Mat<float>& labels = c.find("labels");
  for (Index i = 0; i < labels.rows(); ++i) split.labels.push_back(static_cast<int>(labels(i, 0)));

  std::istringstream meta(c.meta);
  std::string line;
  while (std::getline(meta, line)) {
    if (line.rfind("split ", 0) == 0) split.split_name = line.substr(6);
    else if (line.rfind("class ", 0) == 0) split.class_names.push_back(line.substr(6));
    else if (line.rfind("id ", 0) == 0) split.ids.push_back(line.substr(3));
  }
  if (split.ids.size() != static_cast<std::size_t>(split.size())) {
    throw FormatError("split container " + path + ": id count does not match sample count");
  }
  return split;
}

BatchPlan::BatchPlan(Index n, Index batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  for (Index start = 0; start < n; start += batch_size) {
    const Index stop = std::min(n, start + batch_size);
    batches_.emplace_back(order.begin() + start, order.begin() + stop);
  }
}

}  // namespace pand
