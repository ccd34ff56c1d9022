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

#include "stackens/pretrain.hpp"

#include <gtest/gtest.h>

using namespace stackens;
using namespace stackens::pretrain;
using neural::Input;
using neural::TransformerConfig;
using tokenizer::SpecialIds;

namespace {

std::vector<Input> random_corpus(int n, int len, int vocab, std::uint64_t seed) {
  Rng r = make_rng(seed);
  std::vector<Input> out;
  for (int i = 0; i < n; ++i) {
    Input in;
    for (int t = 0; t < len; ++t)
      in.ids.push_back(SpecialIds::count + static_cast<int>(uniform_index(r, static_cast<std::size_t>(vocab - SpecialIds::count))));
    out.push_back(std::move(in));
  }
  return out;
}

TransformerConfig tiny(int layers = 2) {
  TransformerConfig c;
  c.layers = layers;
  c.hidden = 32;
  c.heads = 4;
  c.vocab_size = 60;
  c.max_len = 16;
  return c;
}

}  // namespace

TEST(Masking, RateAndReplacementMix) {
  const auto corpus = random_corpus(100, 100, 200, 1);
  const auto masked = make_masks(corpus, MaskingSpec{}, 200, 3, 0);
  std::size_t total = 0, as_mask = 0, kept = 0;
  for (std::size_t i = 0; i < masked.size(); ++i)
    for (std::size_t k = 0; k < masked[i].positions.size(); ++k) {
      const auto t = static_cast<std::size_t>(masked[i].positions[k]);
      ++total;
      EXPECT_EQ(masked[i].targets[k], corpus[i].ids[t]);
      as_mask += masked[i].input.ids[t] == SpecialIds::mask;
      kept += masked[i].input.ids[t] == corpus[i].ids[t];
    }
  EXPECT_GE(total, 1350u);
  EXPECT_LE(total, 1650u);
  EXPECT_NEAR(static_cast<double>(as_mask) / static_cast<double>(total), 0.8, 0.05);
  // a random replacement may also land on the original id
  EXPECT_NEAR(static_cast<double>(kept) / static_cast<double>(total), 0.1, 0.03);
}

TEST(Masking, SpecialsAreNeverMasked) {
  std::vector<Input> corpus(50);
  for (auto& in : corpus) in.ids = {SpecialIds::sos, 9, 10, 11, SpecialIds::cls};
  for (const auto& m : make_masks(corpus, MaskingSpec{.mask_rate = 0.9}, 20, 1, 0))
    for (int p : m.positions) {
      EXPECT_GT(p, 0);
      EXPECT_LT(p, 4);
    }
}

TEST(Masking, StaticRepeatsDynamicDiffers) {
  const auto corpus = random_corpus(20, 30, 100, 2);
  MaskingSpec s;
  s.dynamic = false;
  const auto a = make_masks(corpus, s, 100, 5, 0), b = make_masks(corpus, s, 100, 5, 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].positions, b[i].positions);
    EXPECT_EQ(a[i].input.ids, b[i].input.ids);
  }
  s.dynamic = true;
  const auto c = make_masks(corpus, s, 100, 5, 0), d = make_masks(corpus, s, 100, 5, 1);
  bool differ = false;
  for (std::size_t i = 0; i < c.size(); ++i) differ = differ || c[i].positions != d[i].positions;
  EXPECT_TRUE(differ);
}

TEST(Masking, Errors) {
  const auto corpus = random_corpus(1, 3, 100, 2);
  EXPECT_THROW(make_masks(corpus, MaskingSpec{.mask_rate = 1e-9}, 100, 1, 0), Error);
  EXPECT_THROW(make_masks(corpus, MaskingSpec{.mask_rate = 1.5}, 100, 1, 0), Error);
  EXPECT_THROW(make_masks(corpus, MaskingSpec{.mask_token_fraction = 0.5}, 100, 1, 0), Error);
}

TEST(Mlm, InitialLossNearLogV) {
  const auto cfg = tiny();
  const auto m = neural::init_transformer(cfg, 1);
  const auto masked = make_masks(random_corpus(40, 16, cfg.vocab_size, 3), MaskingSpec{}, cfg.vocab_size, 1, 0);
  const double l = mlm_loss(m, MlmHead(cfg.vocab_size), masked);
  EXPECT_NEAR(l, std::log(cfg.vocab_size), 0.05 * std::log(cfg.vocab_size));
}

TEST(Mlm, LearnsRepeatedPattern) {
  const auto cfg = tiny();
  // every sequence is the same cycle, so masked ids are predictable from context
  std::vector<Input> corpus(64);
  for (auto& in : corpus)
    for (int t = 0; t < 16; ++t) in.ids.push_back(SpecialIds::count + t % 8);
  std::vector<double> trace;
  PretrainOptions o;
  o.epochs = 15;
  o.learning_rate = 3e-3;
  o.trace = &trace;
  MlmHead head;
  const auto m = mlm_pretrain(neural::init_transformer(cfg, 1), corpus, MaskingSpec{}, o, &head);
  EXPECT_EQ(m.phase, "pretrained");
  EXPECT_EQ(trace.size(), 60u);
  const auto masked = make_masks(corpus, MaskingSpec{}, cfg.vocab_size, 99, 0);
  EXPECT_LT(mlm_loss(m, head, masked), 0.5 * std::log(cfg.vocab_size));
}

TEST(Rtd, LabelsAreDifferenceIndicator) {
  const std::vector<int> a{5, 6, 7, 8}, b{5, 9, 7, 1};
  EXPECT_EQ(rtd_labels(a, b), (std::vector<int>{0, 1, 0, 1}));
  EXPECT_EQ(rtd_labels(a, a), (std::vector<int>{0, 0, 0, 0}));
  EXPECT_THROW(rtd_labels(a, std::vector<int>{1}), Error);
}

TEST(Rtd, ReplacementsOnlyAtMaskedPositions) {
  const auto cfg = tiny(1);
  const auto gen = neural::init_transformer(cfg, 4);
  const auto corpus = random_corpus(30, 16, cfg.vocab_size, 4);
  const auto masked = make_masks(corpus, MaskingSpec{}, cfg.vocab_size, 2, 0);
  Rng rng = make_rng(1);
  std::size_t replaced = 0, positions = 0, total = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto s = sample_replacements(gen, MlmHead(cfg.vocab_size), masked[i], corpus[i], rng);
    const auto y = rtd_labels(corpus[i].ids, s);
    for (std::size_t t = 0; t < y.size(); ++t) {
      const bool is_masked = std::find(masked[i].positions.begin(), masked[i].positions.end(), static_cast<int>(t)) !=
                             masked[i].positions.end();
      if (!is_masked) {
        EXPECT_EQ(y[t], 0);
      }
      replaced += static_cast<std::size_t>(y[t]);
    }
    positions += masked[i].positions.size();
    total += y.size();
  }
  EXPECT_LE(replaced, positions);
  EXPECT_GT(replaced, 0u);
}

TEST(Rtd, DegenerateGeneratorReplacesNothing) {
  const auto cfg = tiny(1);
  auto gen = neural::init_transformer(cfg, 4);
  // a generator that puts all mass on one id only ever "replaces" with it
  MlmHead head(cfg.vocab_size);
  head.bias[static_cast<std::size_t>(SpecialIds::count)] = 1e3;
  std::vector<Input> corpus(10);
  for (auto& in : corpus) in.ids.assign(16, SpecialIds::count);
  const auto masked = make_masks(corpus, MaskingSpec{.mask_rate = 0.5}, cfg.vocab_size, 1, 0);
  Rng rng = make_rng(1);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto y = rtd_labels(corpus[i].ids, sample_replacements(gen, head, masked[i], corpus[i], rng));
    EXPECT_EQ(std::count(y.begin(), y.end(), 1), 0);
  }
}

TEST(Rtd, JointTrainingRuns) {
  const auto cfg = tiny(2);
  EXPECT_EQ(generator_config(cfg).layers, 1);
  const auto corpus = random_corpus(32, 16, cfg.vocab_size, 7);
  std::vector<double> trace;
  PretrainOptions o;
  o.epochs = 2;
  o.trace = &trace;
  const auto d = rtd_pretrain(neural::init_transformer(generator_config(cfg), 1), neural::init_transformer(cfg, 2), corpus,
                              MaskingSpec{}, o);
  EXPECT_EQ(d.phase, "pretrained");
  EXPECT_EQ(d.config(), cfg);
  ASSERT_FALSE(trace.empty());
  for (double v : trace) EXPECT_TRUE(std::isfinite(v));
}

TEST(Distill, KlNonNegativeAndZeroOnMatch) {
  Rng r = make_rng(3);
  Matrix a(6, 3), b(6, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = 3 * normal01(r);
    b.data()[i] = 3 * normal01(r);
  }
  for (double t : {0.5, 1.0, 2.0, 8.0}) {
    const Vector kl = distill_kl_rows(a, b, t);
    EXPECT_GE(kl.minCoeff(), 0.0);
    EXPECT_NEAR(distill_kl_rows(a, a, t).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  }
}

TEST(Distill, OneHotTeacherAtUnitTemperatureIsCrossEntropy) {
  const Matrix student{{0.3, -1.0, 2.0}, {1.5, 0.1, -0.4}};
  const Matrix teacher{{0, 0, 200.0}, {200.0, 0, 0}};
  const std::vector<int> y{2, 0};
  const auto r = distill_objective(teacher, student, y, DistillSpec{.temperature = 1, .soft_weight = 1, .hard_weight = 0});
  EXPECT_NEAR(r.objective, r.hard, 1e-12);
  const ProbMatrix p = softmax_rows_copy(student);
  EXPECT_NEAR(r.hard, -(std::log(p(0, 2)) + std::log(p(1, 0))) / 2, 1e-12);
}

TEST(Distill, ObjectiveGradientMatchesFiniteDifferences) {
  const Matrix teacher{{1.0, -0.5, 0.2}, {0.0, 2.0, -1.0}};
  Matrix student{{0.3, -1.0, 2.0}, {1.5, 0.1, -0.4}};
  const std::vector<int> y{2, 1};
  const DistillSpec spec{.temperature = 2.5, .soft_weight = 0.7, .hard_weight = 0.3};
  Matrix d;
  distill_objective(teacher, student, y, spec, &d);
  for (Eigen::Index i = 0; i < student.size(); ++i) {
    const double h = 1e-6, keep = student.data()[i];
    student.data()[i] = keep + h;
    const double up = distill_objective(teacher, student, y, spec).objective;
    student.data()[i] = keep - h;
    const double down = distill_objective(teacher, student, y, spec).objective;
    student.data()[i] = keep;
    EXPECT_NEAR(d.data()[i], (up - down) / (2 * h), 1e-8) << i;
  }
}

TEST(Distill, MatchedStudentTracksTeacher) {
  TransformerConfig cfg = tiny(1);
  cfg.classes = 2;
  const auto teacher = neural::init_transformer(cfg, 3);
  auto corpus = neural::LabeledInputs{random_corpus(128, 12, cfg.vocab_size, 9), {}};
  corpus.labels = neural::nn_predict(teacher, corpus.inputs);
  std::vector<double> trace;
  PretrainOptions o;
  o.epochs = 8;
  o.trace = &trace;
  const DistillSpec spec{.temperature = 2, .soft_weight = 1, .hard_weight = 0};
  const auto student = distill(teacher, cfg, corpus, spec, o);
  for (double kl : trace) EXPECT_GE(kl, 0.0);
  EXPECT_LT(distill_kl(teacher, student, corpus.inputs, 2.0), 0.05);
  auto deeper = cfg;
  deeper.layers = 2;
  EXPECT_THROW(distill(teacher, deeper, corpus, spec, o), Error);
}
