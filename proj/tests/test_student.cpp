#include "doctest.h"
#include "oracles.hpp"

#include <pand/student.hpp>

#include <cstring>

using namespace pand;

namespace {

// Overwrites one named parameter tensor.
template <class S>
void set_param(StudentModel<S>& m, const std::string& name, const Mat<S>& value) {
  for (auto& view : m.params()) {
    if (view.name == name) {
      REQUIRE(view.rows == value.rows());
      REQUIRE(view.cols == value.cols());
      std::memcpy(view.data, value.data(), sizeof(S) * static_cast<std::size_t>(value.size()));
      return;
    }
  }
  FAIL("no parameter named " << name);
}

}  // namespace

TEST_CASE("student forward shapes and unit projections") {
  StudentModel<double> m(6, 5, 4, 3, 8, 42);
  Rng rng(1);
  Mat<double> x = rng.gaussian_mat<double>(7, 6, 1.0);
  StudentOutputT<double> out = m.forward(x);
  CHECK(out.logits.rows() == 7);
  CHECK(out.logits.cols() == 3);
  CHECK(out.features.cols() == 4);
  CHECK(out.projected.cols() == 8);
  for (Index i = 0; i < 7; ++i) {
    CHECK(out.projected.row(i).norm() == doctest::Approx(1.0).epsilon(1e-10));
  }
  CHECK_THROWS_AS(m.forward(Mat<double>::Zero(2, 5)), ShapeError);
}

TEST_CASE("zeroed classification head produces zero logits") {
  StudentModel<double> m(6, 5, 4, 3, 8, 42);
  set_param(m, "fc_w", Mat<double>(Mat<double>::Zero(3, 4)));
  Rng rng(2);
  Mat<double> x = rng.gaussian_mat<double>(5, 6, 1.0);
  CHECK(m.forward(x).logits.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("identity-wired student reproduces positive inputs as logits") {
  // input = hidden = feature = class count; every weight an identity, so the
  // ReLU backbone passes positive inputs through untouched.
  const Index d = 4;
  StudentModel<double> m(d, d, d, d, 6, 0);
  const Mat<double> eye = Mat<double>::Identity(d, d);
  set_param(m, "w1", eye);
  set_param(m, "w2", eye);
  set_param(m, "fc_w", eye);
  Rng rng(3);
  Mat<double> x = rng.gaussian_mat<double>(5, d, 1.0).cwiseAbs();
  StudentOutputT<double> out = m.forward(x);
  CHECK((out.logits - x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("head gradient for the logit sum equals batch feature sums") {
  StudentModel<double> m(6, 5, 4, 3, 8, 7);
  Rng rng(4);
  Mat<double> x = rng.gaussian_mat<double>(9, 6, 1.0);
  StudentOutputT<double> out = m.forward(x);

  // d(sum of logits)/d(fc_w[c,:]) = column sums of the features, for every c.
  Mat<double> dlogits = Mat<double>::Ones(9, 3);
  Mat<double> dproj = Mat<double>::Zero(9, 8);
  StudentGrads<double> g = m.backward(x, out, dlogits, dproj);
  Vec<double> feat_sum = out.features.colwise().sum().transpose();
  for (Index c = 0; c < 3; ++c) {
    for (Index k = 0; k < 4; ++k) {
      CHECK(g.fc_w(c, k) == doctest::Approx(feat_sum(k)).epsilon(1e-10));
    }
    CHECK(g.fc_b(c) == doctest::Approx(9.0));
  }

  // And against finite differences of the scalar sum.
  for (auto& view : m.params()) {
    if (view.name != "fc_w") continue;
    Eigen::Map<Mat<double>> w(view.data, view.rows, view.cols);
    for (Index c = 0; c < view.rows; ++c) {
      for (Index k = 0; k < view.cols; ++k) {
        const double keep = w(c, k);
        w(c, k) = keep + 1e-3;
        const double up = m.forward(x).logits.sum();
        w(c, k) = keep - 1e-3;
        const double down = m.forward(x).logits.sum();
        w(c, k) = keep;
        const double fd = (up - down) / 2e-3;
        CHECK(oracle::rel_err(g.fc_w(c, k), fd) < 1e-4);
      }
    }
  }
}

TEST_CASE("student stays under the teacher's encoder budget") {
  // Pipeline-scale dims: 16-dim toy inputs, 64-dim teacher space, 10 classes.
  StudentModel<float> m(16, 8, 8, 10, 64, 0);
  // Teacher towers at default dims: image projection + 3 attention mats + readout.
  const Index teacher_params = 64 * 16 + 3 * 32 * 32 + 64 * 32;
  CHECK(m.param_count() < teacher_params);
  // Stricter: smaller than the image tower alone.
  CHECK(m.param_count() < 64 * 16);
}

TEST_CASE("parameter views expose every tensor once") {
  StudentModel<double> m(6, 5, 4, 3, 8, 7);
  auto views = m.params();
  CHECK(views.size() == 8);
  Index total = 0;
  for (const auto& v : views) total += v.size();
  CHECK(total == m.param_count());
  CHECK(m.param_count() == (5 * 6 + 5) + (4 * 5 + 4) + (3 * 4 + 3) + (8 * 4 + 8));

  // Writing through a view changes the model (and its hash).
  const std::uint64_t before = m.weight_hash();
  views[0].data[0] += 1.0;
  CHECK(m.weight_hash() != before);
}

TEST_CASE("seeded construction is reproducible") {
  StudentModel<double> a(6, 5, 4, 3, 8, 123), b(6, 5, 4, 3, 8, 123), c(6, 5, 4, 3, 8, 124);
  CHECK(a.weight_hash() == b.weight_hash());
  CHECK(a.weight_hash() != c.weight_hash());
  CHECK_THROWS_AS(StudentModel<double>(0, 5, 4, 3, 8, 1), ConfigError);
  CHECK_THROWS_AS(StudentModel<double>(6, 5, 4, 1, 8, 1), ConfigError);
}
