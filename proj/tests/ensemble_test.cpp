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

#include "stackens/ensemble.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace stackens;
using namespace stackens::ensemble;

namespace {

// Synthetic row: its true label plus an id that seeds per-row noise.
struct Row {
  int truth = 0;
  std::uint64_t id = 0;
};

// Fixed-behaviour learner: fit only records the rows it saw.
class ScriptedLearner : public BaseLearner<Row> {
 public:
  enum class Mode { oracle, noise, constant };

  ScriptedLearner(std::string name, Mode mode, std::uint64_t salt = 0) : name_(std::move(name)), mode_(mode), salt_(salt) {}

  std::string name() const override { return name_; }
  void fit(std::span<const Row> x, std::span<const int>, int classes, std::uint64_t) override {
    classes_ = classes;
    fitted_rows_ = x.size();
  }
  ProbMatrix predict_proba(std::span<const Row> x) const override {
    ProbMatrix p = ProbMatrix::Zero(static_cast<Eigen::Index>(x.size()), classes_);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      if (mode_ == Mode::oracle) {
        p(r, x[i].truth) = 1.0;
      } else if (mode_ == Mode::constant) {
        p.row(r).setConstant(1.0 / classes_);
      } else {
        Rng rng = make_rng(x[i].id, salt_);
        for (int c = 0; c < classes_; ++c) p(r, c) = uniform01(rng) + 1e-3;
        p.row(r) /= p.row(r).sum();
      }
    }
    return p;
  }
  std::unique_ptr<BaseLearner<Row>> fresh() const override { return std::make_unique<ScriptedLearner>(name_, mode_, salt_); }
  void save(const std::filesystem::path& p) const override { std::ofstream(p) << classes_; }
  void load(const std::filesystem::path& p) override { std::ifstream(p) >> classes_; }

 private:
  std::string name_;
  Mode mode_;
  std::uint64_t salt_;
  int classes_ = 0;
  std::size_t fitted_rows_ = 0;
};

using Mode = ScriptedLearner::Mode;

std::pair<std::vector<Row>, LabelVector> rows(int n, int classes, std::uint64_t offset = 0) {
  std::vector<Row> x;
  LabelVector y;
  for (int i = 0; i < n; ++i) {
    x.push_back({i % classes, offset + static_cast<std::uint64_t>(i)});
    y.push_back(i % classes);
  }
  return {x, y};
}

LearnerPtr<Row> scripted(std::string name, Mode mode, std::uint64_t salt = 0) {
  return std::make_shared<ScriptedLearner>(std::move(name), mode, salt);
}

MetaSpec logistic_meta() {
  MetaSpec m;
  m.kind = MetaKind::logistic;
  return m;
}

MetaSpec fast_head_meta() {
  MetaSpec m;
  m.train.epochs = 10;
  return m;
}

double accuracy(const LabelVector& a, std::span<const int> b) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
  return static_cast<double>(hit) / static_cast<double>(a.size());
}

// Gaussian blobs as sparse rows.
std::pair<std::vector<features::SparseVector>, LabelVector> blobs(int n, int classes, int dim, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x626C6F62);
  Matrix centers(classes, dim);
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = 2.0 * normal01(rng);
  Matrix d(n, dim);
  LabelVector y;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) d(i, j) = centers(i % classes, j) + 0.8 * normal01(rng);
    y.push_back(i % classes);
  }
  return {classical::to_sparse(d).rows, y};
}

LearnerPtr<features::SparseVector> classical_base(classical::Kind k, int dim) {
  classical::TrainSpec s;
  s.epochs = 10;
  s.tree_count = 10;
  return std::make_shared<ClassicalLearner<features::SparseVector>>(
      k, s, dim, [](const features::SparseVector& v) -> const features::SparseVector& { return v; });
}

}  // namespace

TEST(MetaFeatures, ShapeAndLayout) {
  std::vector<ProbMatrix> ps;
  for (int b = 0; b < 3; ++b) ps.push_back(ProbMatrix::Constant(10, 4, 0.1 * (b + 1)));
  const Matrix m = meta_features(ps);
  EXPECT_EQ(m.rows(), 10);
  EXPECT_EQ(m.cols(), 12);
  EXPECT_EQ(m(3, 5), 0.2);
  EXPECT_EQ(meta_features(std::vector<ProbMatrix>{ps[0]}), ps[0]);
  const ProbMatrix a{{0.9, 0.1}, {0.2, 0.8}}, b{{0.6, 0.4}, {0.3, 0.7}};
  const Matrix ab = meta_features(std::vector<ProbMatrix>{a, b});
  EXPECT_EQ(ab, (Matrix{{0.9, 0.1, 0.6, 0.4}, {0.2, 0.8, 0.3, 0.7}}));
  EXPECT_THROW(meta_features(std::vector<ProbMatrix>{a, ProbMatrix::Constant(3, 2, 0.5)}), Error);
}

TEST(Folds, StratifiedAndChecked) {
  const auto [x, y] = rows(43, 3);
  const auto f = assign_folds(y, 3, 5, 1);
  for (int c = 0; c < 3; ++c) {
    std::vector<int> per(5, 0);
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == c) ++per[static_cast<std::size_t>(f[i])];
    EXPECT_LE(*std::max_element(per.begin(), per.end()) - *std::min_element(per.begin(), per.end()), 1);
  }
  EXPECT_EQ(assign_folds(y, 3, 5, 1), f);
  EXPECT_THROW(assign_folds(y, 3, 1, 1), Error);
  const auto [x2, y2] = rows(10, 4);
  EXPECT_THROW(assign_folds(y2, 4, 5, 1), Error);
}

TEST(Stack, OutOfFoldCoverageAndFitCounts) {
  const auto [x, y] = rows(10, 2);
  StackSpec<Row> spec{{scripted("a", Mode::oracle), scripted("b", Mode::noise, 1)}, logistic_meta(), 2, 3, false, {}};
  const auto [m, curve] = stack_train<Row>(spec, x, y, {}, {}, 2);
  for (std::size_t b = 0; b < 2; ++b) {
    // two fold fits during stacking plus one deployment fit
    EXPECT_EQ(m.ledger.fit_count(b), 3u);
    for (std::size_t i = 0; i < 10; ++i) {
      const int f = m.ledger.producer[b][i];
      ASSERT_GE(f, 0);
      EXPECT_LT(f, 2);
    }
  }
  EXPECT_EQ(m.ledger.fits[0][2].size(), 10u);
  EXPECT_TRUE(leak_free(m.ledger));
  EXPECT_EQ(m.train_meta.rows(), 10);
  EXPECT_EQ(m.train_meta.cols(), 4);
  EXPECT_EQ(curve.size(), 30u);
}

TEST(Stack, LeakAuditCatchesInFoldProducer) {
  const auto [x, y] = rows(20, 2);
  StackSpec<Row> spec{{scripted("a", Mode::oracle), scripted("b", Mode::noise, 1)}, logistic_meta(), 4, 1, false, {}};
  auto ledger = stack_train<Row>(spec, x, y, {}, {}, 2).first.ledger;
  EXPECT_TRUE(leak_free(ledger));
  ledger.producer[1][7] = static_cast<int>(ledger.fits[1].size() - 1);  // the full-data fit saw row 7
  EXPECT_FALSE(leak_free(ledger));
  spec.leaky = true;
  const auto leaky = stack_train<Row>(spec, x, y, {}, {}, 2).first;
  EXPECT_TRUE(leaky.leaky);
  EXPECT_FALSE(leak_free(leaky.ledger));
}

TEST(Stack, Errors) {
  const auto [x, y] = rows(20, 2);
  StackSpec<Row> one{{scripted("a", Mode::oracle)}, logistic_meta(), 2, 1, false, {}};
  EXPECT_THROW(stack_train<Row>(one, x, y, {}, {}, 2), Error);
  StackSpec<Row> many_folds{{scripted("a", Mode::oracle), scripted("b", Mode::oracle)}, logistic_meta(), 15, 1, false, {}};
  EXPECT_THROW(stack_train<Row>(many_folds, x, y, {}, {}, 2), Error);
  EXPECT_THROW(meta_kind_from_string("forest"), Error);
}

TEST(Stack, BaseFailureNamesTheBase) {
  const auto [x, y] = rows(40, 2);
  std::vector<features::SparseVector> sx(40);
  StackSpec<features::SparseVector> spec{{classical_base(classical::Kind::lr, 3), classical_base(classical::Kind::pac, 0)},
                                         logistic_meta(), 2, 1, false, {}};
  for (auto& v : sx) v = {{0}, {1.0}};
  try {
    stack_train<features::SparseVector>(spec, sx, y, {}, {}, 2);
    FAIL() << "expected failure";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("base 1"), std::string::npos) << e.what();
  }
}

TEST(Stack, OracleAndNoiseKeepsOracleAccuracy) {
  double mean = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto [x, y] = rows(200, 3, seed * 1000);
    const auto [vx, vy] = rows(90, 3, seed * 1000 + 500);
    StackSpec<Row> spec{{scripted("oracle", Mode::oracle), scripted("noise", Mode::noise, seed)}, fast_head_meta(), 5, seed,
                        false, {}};
    const auto [m, curve] = stack_train<Row>(spec, x, y, vx, vy, 3);
    EXPECT_EQ(curve.size(), 10u);
    mean += accuracy(stack_predict_labels<Row>(m, vx), vy) / 5.0;
  }
  EXPECT_GE(mean, 1.0 - 0.02);
}

TEST(Stack, LogisticWithSinglePerfectBase) {
  const auto [x, y] = rows(100, 4);
  const auto [vx, vy] = rows(40, 4, 7000);
  StackSpec<Row> spec{{scripted("oracle", Mode::oracle), scripted("flat", Mode::constant)}, logistic_meta(), 5, 2, false, {}};
  const auto m = stack_train<Row>(spec, x, y, vx, vy, 4).first;
  EXPECT_GE(accuracy(stack_predict_labels<Row>(m, vx), vy), 1.0 - 0.02);
  // constant block carries no signal; its weights stay below the informative block's
  const Matrix& w = m.meta.logistic->weights;
  EXPECT_LT(w.middleCols(4, 4).norm(), w.leftCols(4).norm());
}

TEST(Meta, DegenerateOneHotPredictsThatClass) {
  // every base emits the same one-hot row for class c; the meta must return c
  const int classes = 3, bases = 2;
  Matrix meta = Matrix::Zero(60, bases * classes);
  LabelVector y;
  for (int i = 0; i < 60; ++i) {
    const int c = i % classes;
    for (int b = 0; b < bases; ++b) meta(i, b * classes + c) = 1.0;
    y.push_back(c);
  }
  for (const auto& spec : {logistic_meta(), fast_head_meta()}) {
    const auto [m, curve] = build_meta(spec, meta, y, bases, classes);
    EXPECT_EQ(argmax_rows(m.predict_proba(meta)), y) << to_string(spec.kind);
    const ProbMatrix p = m.predict_proba(meta);
    for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(Meta, CurveHasOneFiniteRowPerEpoch) {
  const auto [x, y] = rows(50, 2);
  const auto [vx, vy] = rows(20, 2, 900);
  for (auto spec : {logistic_meta(), fast_head_meta()}) {
    spec.train.epochs = 7;
    spec.logistic.epochs = 7;
    StackSpec<Row> s{{scripted("oracle", Mode::oracle), scripted("noise", Mode::noise, 3)}, spec, 5, 4, false, {}};
    const auto curve = stack_train<Row>(s, x, y, vx, vy, 2).second;
    ASSERT_EQ(curve.size(), 7u);
    for (std::size_t e = 0; e < curve.size(); ++e) {
      EXPECT_EQ(curve.points[e].epoch, static_cast<int>(e));
      EXPECT_TRUE(std::isfinite(curve.points[e].train_loss));
      EXPECT_TRUE(std::isfinite(curve.points[e].val_loss));
    }
  }
}

TEST(Stack, BaseOrderPermutationWithLogisticMeta) {
  const int dim = 5;
  const auto [x, y] = blobs(120, 3, dim, 1);
  const auto [vx, vy] = blobs(30, 3, dim, 2);
  const auto lr = classical_base(classical::Kind::lr, dim), pac = classical_base(classical::Kind::pac, dim),
             rf = classical_base(classical::Kind::rf, dim);
  StackSpec<features::SparseVector> a{{lr, pac, rf}, logistic_meta(), 3, 5, false, {}};
  StackSpec<features::SparseVector> b{{rf, lr, pac}, logistic_meta(), 3, 5, false, {}};
  const auto ma = stack_train<features::SparseVector>(a, x, y, vx, vy, 3).first;
  const auto mb = stack_train<features::SparseVector>(b, x, y, vx, vy, 3).first;
  const ProbMatrix pa = stack_predict<features::SparseVector>(ma, vx), pb = stack_predict<features::SparseVector>(mb, vx);
  // only summation order differs between the two meta fits
  EXPECT_LT((pa - pb).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Stack, DeterministicAndPersistent) {
  const int dim = 4;
  const auto [x, y] = blobs(90, 3, dim, 3);
  const auto [vx, vy] = blobs(30, 3, dim, 4);
  const std::vector<LearnerPtr<features::SparseVector>> bases{classical_base(classical::Kind::lr, dim),
                                                             classical_base(classical::Kind::gb, dim)};
  for (const auto& meta : {logistic_meta(), fast_head_meta()}) {
    StackSpec<features::SparseVector> spec{bases, meta, 3, 9, false, {}};
    const auto [m1, c1] = stack_train<features::SparseVector>(spec, x, y, vx, vy, 3);
    const auto [m2, c2] = stack_train<features::SparseVector>(spec, x, y, vx, vy, 3);
    EXPECT_EQ(c1, c2);
    const ProbMatrix p = stack_predict<features::SparseVector>(m1, vx);
    EXPECT_EQ(p, stack_predict<features::SparseVector>(m2, vx));
    for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
    const auto dir = std::filesystem::temp_directory_path() / ("stackens_stack_" + std::string(to_string(meta.kind)));
    std::filesystem::remove_all(dir);
    save_stacked(m1, dir);
    const auto back = load_stacked<features::SparseVector>(dir, bases);
    EXPECT_EQ(stack_predict<features::SparseVector>(back, vx), p);
    EXPECT_EQ(back.ledger.fold_of, m1.ledger.fold_of);
    EXPECT_THROW(load_stacked<features::SparseVector>(dir, {bases[1], bases[0]}), Error);
  }
}

TEST(Stack, PrefitBasesAreDeployedAsGiven) {
  const auto [x, y] = rows(20, 2);
  std::vector<std::shared_ptr<BaseLearner<Row>>> prefit;
  for (const auto& b : {scripted("a", Mode::oracle), scripted("b", Mode::noise, 1)}) {
    prefit.push_back(b->fresh());
    prefit.back()->fit(x, y, 2, 1);
  }
  StackSpec<Row> spec{{scripted("a", Mode::oracle), scripted("b", Mode::noise, 1)}, logistic_meta(), 2, 3, false, {}};
  spec.prefit = prefit;
  const auto m = stack_train<Row>(spec, x, y, {}, {}, 2).first;
  EXPECT_EQ(m.bases[0], prefit[0]);
  EXPECT_EQ(m.bases[1], prefit[1]);
  EXPECT_EQ(m.ledger.fit_count(0), 3u);
  EXPECT_TRUE(leak_free(m.ledger));
  spec.prefit = {prefit[1], prefit[0]};
  EXPECT_THROW(stack_train<Row>(spec, x, y, {}, {}, 2), Error);
}

TEST(TransformerBase, DistilCurveHasOneRowPerEpoch) {
  struct Tok {
    neural::Input in;
  };
  neural::TransformerConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.vocab_size = 30;
  cfg.max_len = 8;
  TransformerRecipe r;
  r.config = cfg;
  r.teacher_config = cfg;
  r.teacher_config.layers = 2;
  r.distil = true;
  r.train.epochs = 3;
  TransformerLearner<Tok> learner("distil", r, [](const Tok& t) -> const neural::Input& { return t.in; });
  std::vector<Tok> x;
  LabelVector y;
  Rng rng = make_rng(2);
  for (int i = 0; i < 40; ++i) {
    Tok t;
    t.in.ids = {tokenizer::SpecialIds::sos};
    for (int k = 0; k < 6; ++k) t.in.ids.push_back(5 + static_cast<int>(uniform_index(rng, 25)));
    x.push_back(t);
    y.push_back(i % 2);
  }
  learner.fit(x, y, 2, 4);
  ASSERT_NE(learner.curve(), nullptr);
  EXPECT_EQ(learner.curve()->size(), 3u);
  EXPECT_EQ(learner.model().config().layers, 1);
  EXPECT_EQ(learner.predict_proba(x).rows(), 40);
}
