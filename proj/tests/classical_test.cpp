// Copyright 2026 The stackens Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stackens/classical.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace stackens;
using namespace stackens::classical;

namespace {

// 20 points in the plane, labelled by the side of x0 + 2 x1 = 1.5.
std::pair<SparseMatrix, LabelVector> separable_2d() {
  Matrix d(20, 2);
  LabelVector y;
  Rng rng = make_rng(5);
  for (int i = 0; i < 20; ++i) {
    double a, b;
    do {
      a = uniform01(rng) * 2;
      b = uniform01(rng) * 2;
    } while (std::abs(a + 2 * b - 1.5) < 0.3);
    d(i, 0) = a;
    d(i, 1) = b;
    y.push_back(a + 2 * b > 1.5 ? 1 : 0);
  }
  return {to_sparse(d), y};
}

// Gaussian blobs, one per class, in `dim` dimensions.
std::pair<SparseMatrix, LabelVector> blobs(int n, int classes, int dim, std::uint64_t seed, double spread = 0.6) {
  Rng rng = make_rng(seed);
  Matrix centers(classes, dim);
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = 2.0 * normal01(rng);
  Matrix d(n, dim);
  LabelVector y;
  for (int i = 0; i < n; ++i) {
    const int c = i % classes;
    for (int j = 0; j < dim; ++j) d(i, j) = centers(c, j) + spread * normal01(rng);
    y.push_back(c);
  }
  return {to_sparse(d), y};
}

double accuracy(const LabelVector& a, const LabelVector& b) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
  return static_cast<double>(hit) / static_cast<double>(a.size());
}

// Brute-force check that some line separates the fixture (grid over angles
// and offsets), so 100% training accuracy is attainable.
bool grid_separable(const SparseMatrix& x, const LabelVector& y) {
  for (int a = 0; a < 360; ++a) {
    const double th = a * M_PI / 180.0, u = std::cos(th), v = std::sin(th);
    for (int o = -400; o <= 400; ++o) {
      const double off = o / 100.0;
      bool ok = true;
      for (std::size_t i = 0; i < x.size() && ok; ++i) {
        const double s = u * x.rows[i].value_at(0) + v * x.rows[i].value_at(1) - off;
        ok = (s > 0) == (y[i] == 1);
      }
      if (ok) return true;
    }
  }
  return false;
}

}  // namespace

TEST(Linear, LrSeparatesFixture) {
  auto [x, y] = separable_2d();
  ASSERT_TRUE(grid_separable(x, y));
  auto spec = TrainSpec::defaults(Kind::lr);
  spec.epochs = 200;
  spec.learning_rate = 20.0;
  spec.regularization = 0;
  const auto m = train_classical(Kind::lr, x, y, 2, spec);
  EXPECT_EQ(m.weights.rows(), 1);
  EXPECT_DOUBLE_EQ(accuracy(predict(m, x), y), 1.0);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  for (int classes : {2, 4}) {
    auto [x, y] = blobs(12, classes, 5, 17 + static_cast<std::uint64_t>(classes));
    Rng rng = make_rng(3);
    const Eigen::Index k = classes == 2 ? 1 : classes;
    Matrix w(k, 5);
    Vector b(k);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.3 * normal01(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = 0.3 * normal01(rng);
    const auto [gw, gb] = lr_gradient(w, b, x, y, 0.01);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      Matrix wp = w, wm = w;
      wp.data()[i] += h;
      wm.data()[i] -= h;
      const double num = (lr_objective(wp, b, x, y, 0.01) - lr_objective(wm, b, x, y, 0.01)) / (2 * h);
      EXPECT_LT(std::abs(num - gw.data()[i]) / std::max({std::abs(num), std::abs(gw.data()[i]), 1e-8}), 1e-5);
    }
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      Vector bp = b, bm = b;
      bp(i) += h;
      bm(i) -= h;
      const double num = (lr_objective(w, bp, x, y, 0.01) - lr_objective(w, bm, x, y, 0.01)) / (2 * h);
      EXPECT_LT(std::abs(num - gb(i)) / std::max({std::abs(num), std::abs(gb(i)), 1e-8}), 1e-5);
    }
  }
}

TEST(Linear, PaStepPassiveOnSatisfiedMargin) {
  RowVector w(3);
  w << 2.0, 0.0, -1.0;
  double b = 0.5;
  const auto x = features::make_sparse({{0, 1.0}, {2, 0.5}});
  // margin = 1 * (2 - 0.5 + 0.5) = 2 >= 1
  const RowVector before = w;
  EXPECT_EQ(detail::pa_step(w, b, x, 1.0), 0.0);
  EXPECT_EQ(w, before);
  EXPECT_EQ(b, 0.5);
  // violated: target -1, hinge loss 3, ||x||^2 + 1 = 2.25
  EXPECT_NEAR(detail::pa_step(w, b, x, -1.0), 3.0 / 2.25, 1e-15);
  EXPECT_NEAR(-1.0 * (x.dot(w) + b), 1.0, 1e-12);
}

TEST(Linear, MarginKindsShape) {
  auto [x, y] = blobs(60, 3, 4, 2);
  for (Kind k : {Kind::lsvm, Kind::pac}) {
    const auto m = train_classical(k, x, y, 3, TrainSpec::defaults(k));
    EXPECT_EQ(m.weights.rows(), 3);
    EXPECT_GT(accuracy(predict(m, x), y), 0.9) << to_string(k);
  }
  auto [xb, yb] = blobs(40, 2, 4, 3);
  EXPECT_EQ(train_classical(Kind::lsvm, xb, yb, 2, TrainSpec::defaults(Kind::lsvm)).weights.rows(), 1);
}

TEST(Proba, ZeroWeightsAreUniform) {
  ClassicalModel m;
  m.kind = Kind::lr;
  m.classes = 4;
  m.features = 3;
  m.weights = Matrix::Zero(4, 3);
  m.bias = Vector::Zero(4);
  const auto p = predict_proba(m, to_sparse(Matrix::Random(5, 3)));
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_DOUBLE_EQ(p.data()[i], 0.25);
}

TEST(Proba, HandSetSoftmax) {
  ClassicalModel m;
  m.kind = Kind::lr;
  m.classes = 3;
  m.features = 2;
  m.weights.resize(3, 2);
  m.weights << 1, 0, 0, 1, -1, -1;
  m.bias = Vector::Zero(3);
  Matrix x(1, 2);
  x << 1.0, 2.0;
  // scores 1, 2, -3: exp(1) = 2.718281828, exp(2) = 7.389056099, exp(-3) = 0.049787068
  const auto p = predict_proba(m, to_sparse(x));
  const double z = 2.718281828459045 + 7.38905609893065 + 0.049787068367863944;
  EXPECT_NEAR(p(0, 0), 2.718281828459045 / z, 1e-12);
  EXPECT_NEAR(p(0, 1), 7.38905609893065 / z, 1e-12);
  EXPECT_NEAR(p(0, 2), 0.049787068367863944 / z, 1e-12);
  EXPECT_THROW(predict_proba(m, to_sparse(Matrix::Zero(1, 3))), Error);
}

TEST(Predict, TieRules) {
  RowVector row(2);
  row << 0.5, 0.5;
  EXPECT_EQ(argmax(row), 0);
  ProbMatrix p(1, 2);
  p << 0.5, 0.5;
  EXPECT_EQ(argmax_rows(p)[0], 1);
  EXPECT_EQ(threshold_label(0.5), 1);
  RowVector r3(3);
  r3 << 0.1, 0.7, 0.2;
  EXPECT_EQ(argmax(r3), 1);
}

TEST(Trees, SingleFullTreeMemorises) {
  auto [x, y] = blobs(80, 3, 6, 9, 1.5);
  auto spec = TrainSpec::defaults(Kind::rf);
  spec.tree_count = 1;
  spec.bootstrap = false;
  spec.max_depth = 0;
  // all features considered at every node
  const auto m = train_classical(Kind::rf, x, y, 3, spec);
  EXPECT_DOUBLE_EQ(accuracy(predict(m, x), y), 1.0);
}

TEST(Trees, ForestLearnsBlobs) {
  auto [x, y] = blobs(150, 3, 8, 10);
  auto [xt, yt] = blobs(90, 3, 8, 10);
  auto spec = TrainSpec::defaults(Kind::rf);
  spec.tree_count = 30;
  const auto m = train_classical(Kind::rf, x, y, 3, spec);
  EXPECT_GT(accuracy(predict(m, xt), yt), 0.9);
}

TEST(Boosting, LossNonIncreasingAndLevelVsLeafWise) {
  auto [x, y] = blobs(120, 3, 5, 12, 1.2);
  for (Kind k : {Kind::gb, Kind::lgbm}) {
    auto spec = TrainSpec::defaults(k);
    spec.tree_count = 25;
    const auto m = train_classical(k, x, y, 3, spec);
    const auto trace = boosting_loss_trace(m, x, y);
    ASSERT_EQ(trace.size(), 26u);
    for (std::size_t r = 1; r < trace.size(); ++r) EXPECT_LE(trace[r], trace[r - 1] + 1e-12) << to_string(k) << " round " << r;
    EXPECT_LT(trace.back(), trace.front());
    for (const auto& t : m.trees) {
      if (k == Kind::gb) {
        EXPECT_LE(t.depth(), 4);
      } else {
        EXPECT_LE(static_cast<int>(t.leaf_count()), spec.max_leaves);
      }
    }
  }
}

TEST(AllKinds, SimplexDeterminismAndPredictConsistency) {
  auto [x, y] = blobs(90, 3, 6, 21);
  for (Kind k : kAllKinds) {
    auto spec = TrainSpec::defaults(k);
    spec.tree_count = 10;
    spec.epochs = 10;
    const auto a = train_classical(k, x, y, 3, spec);
    const auto b = train_classical(k, x, y, 3, spec);
    EXPECT_EQ(a, b) << to_string(k);
    const auto p = predict_proba(a, x);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
      EXPECT_GE(p.row(i).minCoeff(), 0.0);
    }
    EXPECT_EQ(predict(a, x), argmax_rows(p));
  }
}

TEST(AllKinds, BinaryThresholdEqualsArgmax) {
  auto [x, y] = blobs(60, 2, 4, 4, 1.5);
  for (Kind k : kAllKinds) {
    auto spec = TrainSpec::defaults(k);
    spec.tree_count = 5;
    const auto m = train_classical(k, x, y, 2, spec);
    const auto p = predict_proba(m, x);
    const auto pred = predict(m, x);
    for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_EQ(pred[static_cast<std::size_t>(i)], threshold_label(p(i, 1)));
  }
}

TEST(Validation, Errors) {
  auto [x, y] = blobs(10, 2, 3, 1);
  const auto spec = TrainSpec::defaults(Kind::lr);
  EXPECT_THROW(train_classical(Kind::lr, SparseMatrix{{}, 3}, LabelVector{}, 2, spec), Error);
  EXPECT_THROW(train_classical(Kind::lr, x, LabelVector(10, 1), 2, spec), Error);
  auto bad = x;
  bad.rows[0].values[0] = std::nan("");
  EXPECT_THROW(train_classical(Kind::lr, bad, y, 2, spec), Error);
  EXPECT_THROW(kind_from_string("SVM"), Error);
}

TEST(Persistence, RoundTripAllKinds) {
  auto [x, y] = blobs(45, 3, 4, 8);
  for (Kind k : kAllKinds) {
    auto spec = TrainSpec::defaults(k);
    spec.tree_count = 4;
    const auto m = train_classical(k, x, y, 3, spec);
    const auto path = std::filesystem::temp_directory_path() / ("stackens_classical_" + std::string(to_string(k)));
    save(m, path);
    const auto back = load(path);
    EXPECT_EQ(back, m) << to_string(k);
    EXPECT_EQ(predict_proba(back, x), predict_proba(m, x));
  }
}
