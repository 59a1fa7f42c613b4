#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pand {

using Index = Eigen::Index;

/// Dense row-major matrix; rows are samples/classes, which also makes the
/// on-disk row-major layouts a straight memcpy of .data().
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using IntMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct IngestError : Error { using Error::Error; };
struct EvalError : Error { using Error::Error; };
struct FreezeError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// std::mt19937_64 output is pinned by the standard; the distributions below
// avoid <random>'s implementation-defined distribution classes so that a seed
// produces the same stream on every platform.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, n) via multiply-shift.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(engine_()) * n) >> 64);
  }

  /// Fisher-Yates; std::shuffle is implementation-defined, this is not.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  template <class S>
  Mat<S> gaussian_mat(Index rows, Index cols, double sigma) {
    Mat<S> m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j)
        m(i, j) = static_cast<S>(sigma * gaussian());
    return m;
  }

  template <class S>
  Vec<S> gaussian_vec(Index n, double sigma) {
    Vec<S> v(n);
    for (Index i = 0; i < n; ++i) v(i) = static_cast<S>(sigma * gaussian());
    return v;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Hashing (FNV-1a 64), used for config identities and freeze contracts.

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

template <class S>
std::uint64_t hash_bytes(const Mat<S>& m, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(m.data(), sizeof(S) * static_cast<std::size_t>(m.size()), h);
}

template <class S>
std::uint64_t hash_bytes(const Vec<S>& v, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(v.data(), sizeof(S) * static_cast<std::size_t>(v.size()), h);
}

inline std::string to_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Small numeric helpers shared across modules.

template <class S>
bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

/// Row-stabilized softmax.
template <class S>
Mat<S> softmax_rows(const Mat<S>& logits) {
  Vec<S> row_max = logits.rowwise().maxCoeff();
  Mat<S> p = (logits.colwise() - row_max).array().exp();
  Vec<S> row_sum = p.rowwise().sum();
  p.array().colwise() /= row_sum.array();
  return p;
}

/// Mean cross-entropy of row-softmaxed logits against integer labels,
/// with the gradient (softmax - onehot)/N written to *grad when non-null.
template <class S>
S softmax_cross_entropy(const Mat<S>& logits, const std::vector<int>& labels,
                        Mat<S>* grad = nullptr) {
  const Index n = logits.rows();
  const Index c = logits.cols();
  Vec<S> row_max = logits.rowwise().maxCoeff();
  Mat<S> shifted = logits.colwise() - row_max;
  Mat<S> e = shifted.array().exp();
  Vec<S> row_sum = e.rowwise().sum();
  S loss = 0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      throw IndexError("label " + std::to_string(y) + " out of range for " +
                       std::to_string(c) + " classes");
    }
    loss += std::log(row_sum(i)) - shifted(i, y);
  }
  loss /= static_cast<S>(n);
  if (grad) {
    *grad = e;
    grad->array().colwise() /= row_sum.array();
    for (Index i = 0; i < n; ++i) {
      (*grad)(i, labels[static_cast<std::size_t>(i)]) -= S(1);
    }
    *grad /= static_cast<S>(n);
  }
  return loss;
}

}  // namespace pand
