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

#pragma once

#include "stackens/classical.hpp"
#include "stackens/metrics.hpp"
#include "stackens/neural.hpp"
#include "stackens/pretrain.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace stackens::ensemble {

/// A trainable base classifier over inputs of type `In`. `fresh()` returns an
/// untrained clone carrying the same configuration (and any pretrained
/// initial weights).
template <typename In>
class BaseLearner {
 public:
  virtual ~BaseLearner() = default;
  virtual std::string name() const = 0;
  virtual void fit(std::span<const In> x, std::span<const int> y, int classes, std::uint64_t seed) = 0;
  virtual ProbMatrix predict_proba(std::span<const In> x) const = 0;
  virtual std::unique_ptr<BaseLearner> fresh() const = 0;
  virtual void save(const std::filesystem::path&) const {
    throw Error("ensemble", "base '" + name() + "' does not support persistence");
  }
  virtual void load(const std::filesystem::path&) {
    throw Error("ensemble", "base '" + name() + "' does not support persistence");
  }
  // Per-epoch fine-tuning curve of the last fit, when the learner has one.
  virtual const neural::LossCurve* curve() const { return nullptr; }
};

template <typename In>
using LearnerPtr = std::shared_ptr<const BaseLearner<In>>;

/// Classical kind over a sparse view of each input.
template <typename In>
class ClassicalLearner : public BaseLearner<In> {
 public:
  using Project = std::function<const features::SparseVector&(const In&)>;

  ClassicalLearner(classical::Kind kind, classical::TrainSpec spec, int dimension, Project project)
      : kind_(kind), spec_(spec), dim_(dimension), project_(std::move(project)) {}

  std::string name() const override { return classical::to_string(kind_); }

  void fit(std::span<const In> x, std::span<const int> y, int classes, std::uint64_t seed) override {
    auto s = spec_;
    s.seed = seed;
    model_ = classical::train_classical(kind_, gather(x), y, classes, s);
  }

  ProbMatrix predict_proba(std::span<const In> x) const override {
    require(model_.has_value(), "ensemble", "base '" + name() + "' used before training");
    return classical::predict_proba(*model_, gather(x));
  }

  std::unique_ptr<BaseLearner<In>> fresh() const override {
    return std::make_unique<ClassicalLearner>(kind_, spec_, dim_, project_);
  }

  void save(const std::filesystem::path& p) const override { classical::save(*model_, p); }
  void load(const std::filesystem::path& p) override { model_ = classical::load(p); }

  const classical::ClassicalModel& model() const { return *model_; }

 private:
  classical::SparseMatrix gather(std::span<const In> x) const {
    classical::SparseMatrix m;
    m.cols = dim_;
    m.rows.reserve(x.size());
    for (const auto& r : x) m.rows.push_back(project_(r));
    return m;
  }

  classical::Kind kind_;
  classical::TrainSpec spec_;
  int dim_;
  Project project_;
  std::optional<classical::ClassicalModel> model_;
};

/// How a transformer base is fine-tuned. `distil` trains a teacher with the
/// teacher config on the same rows first, then distils into the base config.
struct TransformerRecipe {
  neural::TransformerConfig config;
  neural::TrainOptions train;
  // Starting weights (e.g. a pretrained encoder); random init when empty.
  std::shared_ptr<const neural::TransformerModel> initial;
  bool distil = false;
  neural::TransformerConfig teacher_config;
  pretrain::DistillSpec distill_spec;
  // Fraction of the fit rows held out for the fine-tuning curve.
  double curve_holdout = 0.1;
};

template <typename In>
class TransformerLearner : public BaseLearner<In> {
 public:
  using Project = std::function<const neural::Input&(const In&)>;

  TransformerLearner(std::string name, TransformerRecipe recipe, Project project)
      : name_(std::move(name)), recipe_(std::move(recipe)), project_(std::move(project)) {}

  std::string name() const override { return name_; }

  void fit(std::span<const In> x, std::span<const int> y, int classes, std::uint64_t seed) override {
    auto cfg = recipe_.config;
    cfg.classes = classes;
    auto opt = recipe_.train;
    opt.seed = seed;
    // deterministic holdout for the curve
    std::vector<std::size_t> order(x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = make_rng(seed, 0x686F6C64ULL);
    shuffle(order, rng);
    const auto held = static_cast<std::size_t>(recipe_.curve_holdout * static_cast<double>(x.size()));
    neural::LabeledInputs tr, va;
    for (std::size_t k = 0; k < order.size(); ++k) {
      auto& dst = k < held ? va : tr;
      dst.inputs.push_back(project_(x[order[k]]));
      dst.labels.push_back(y[order[k]]);
    }
    if (!recipe_.distil) {
      auto init = init_model(cfg, seed);
      auto [m, c] = neural::train_classifier(std::move(init), tr, va, opt);
      model_ = std::move(m);
      curve_ = std::move(c);
      return;
    }
    auto tcfg = recipe_.teacher_config;
    tcfg.classes = classes;
    auto teacher = recipe_.initial ? with_classes(*recipe_.initial, classes, seed) : neural::init_transformer(tcfg, seed);
    teacher = neural::train_classifier(std::move(teacher), tr, va, opt).first;
    pretrain::PretrainOptions po;
    po.epochs = opt.epochs;
    po.learning_rate = opt.learning_rate;
    po.batch_size = opt.batch_size;
    po.seed = seed;
    po.clip_norm = opt.clip_norm;
    curve_ = neural::LossCurve{};
    po.on_epoch = [&](int e, const neural::TransformerModel& student) {
      curve_.points.push_back({e, neural::classifier_loss(student, tr.inputs, tr.labels),
                               va.size() ? neural::classifier_loss(student, va.inputs, va.labels) : 0.0});
    };
    model_ = pretrain::distill(teacher, cfg, tr, recipe_.distill_spec, po);
  }

  ProbMatrix predict_proba(std::span<const In> x) const override {
    require(model_.has_value(), "ensemble", "base '" + name_ + "' used before training");
    std::vector<neural::Input> in;
    in.reserve(x.size());
    for (const auto& r : x) in.push_back(project_(r));
    return neural::nn_predict_proba(*model_, in);
  }

  std::unique_ptr<BaseLearner<In>> fresh() const override {
    return std::make_unique<TransformerLearner>(name_, recipe_, project_);
  }

  void save(const std::filesystem::path& p) const override { neural::save_checkpoint(*model_, p); }
  void load(const std::filesystem::path& p) override { model_ = neural::load_checkpoint(p); }
  const neural::LossCurve* curve() const override { return model_ ? &curve_ : nullptr; }

  const neural::TransformerModel& model() const { return *model_; }

 private:
  // A pretrained encoder keeps its weights; its head is re-drawn for the
  // task's class count.
  static neural::TransformerModel with_classes(const neural::TransformerModel& src, int classes, std::uint64_t seed) {
    auto cfg = src.config();
    cfg.classes = classes;
    auto m = neural::init_transformer(cfg, seed);
    for (std::size_t s = 0; s < m.groups().size(); ++s) {
      const auto& g = m.groups()[s];
      if (g.name.starts_with("head.")) continue;
      const auto& sg = src.groups()[s];
      std::copy_n(src.params().begin() + static_cast<std::ptrdiff_t>(sg.offset), sg.size(),
                  m.params().begin() + static_cast<std::ptrdiff_t>(g.offset));
    }
    return m;
  }

  neural::TransformerModel init_model(const neural::TransformerConfig& cfg, std::uint64_t seed) const {
    if (recipe_.initial) return with_classes(*recipe_.initial, cfg.classes, seed);
    return neural::init_transformer(cfg, seed);
  }

  std::string name_;
  TransformerRecipe recipe_;
  Project project_;
  std::optional<neural::TransformerModel> model_;
  neural::LossCurve curve_;
};

// ------------------------------------------------------------ meta features --

/// Horizontal concatenation in base order: base b occupies columns
/// [b*C, (b+1)*C).
inline Matrix meta_features(std::span<const ProbMatrix> base_predictions) {
  require(!base_predictions.empty(), "ensemble", "no base predictions");
  const auto n = base_predictions[0].rows(), c = base_predictions[0].cols();
  Matrix m(n, c * static_cast<Eigen::Index>(base_predictions.size()));
  for (std::size_t b = 0; b < base_predictions.size(); ++b) {
    const auto& p = base_predictions[b];
    require(p.rows() == n && p.cols() == c, "ensemble",
            "base " + std::to_string(b) + " prediction shape " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                " differs from " + std::to_string(n) + "x" + std::to_string(c));
    m.middleCols(static_cast<Eigen::Index>(b) * c, c) = p;
  }
  return m;
}

enum class MetaKind { transformer_head, logistic };

inline const char* to_string(MetaKind k) { return k == MetaKind::logistic ? "logistic" : "transformer-head"; }

inline MetaKind meta_kind_from_string(std::string_view s) {
  if (s == "transformer-head") return MetaKind::transformer_head;
  if (s == "logistic") return MetaKind::logistic;
  throw Error("ensemble", "unknown meta kind '" + std::string(s) + "' (expected transformer-head or logistic)");
}

struct MetaSpec {
  MetaKind kind = MetaKind::transformer_head;
  // transformer-head: a roberta-like encoder over one token per base
  int layers = 2;
  int hidden = 32;
  int heads = 4;
  double dropout = 0.0;
  neural::TrainOptions train{.epochs = 30, .learning_rate = 3e-3, .batch_size = 16};
  // logistic
  classical::TrainSpec logistic = [] {
    classical::TrainSpec s;
    s.epochs = 30;
    s.learning_rate = 0.5;
    s.regularization = 1e-4;
    return s;
  }();
};

/// Trained meta-level classifier.
struct MetaModel {
  MetaKind kind = MetaKind::transformer_head;
  int bases = 0;
  int classes = 0;
  std::optional<neural::TransformerModel> encoder;
  std::optional<classical::ClassicalModel> logistic;

  /// One dense token per base: row b of the returned B x C matrix is base b's
  /// probability block.
  static neural::Input tokens(const Matrix& meta, Eigen::Index row, int bases, int classes) {
    Matrix t(bases, classes);
    for (int b = 0; b < bases; ++b) t.row(b) = meta.row(row).segment(static_cast<Eigen::Index>(b) * classes, classes);
    return neural::Input::from_dense(std::move(t));
  }

  std::vector<neural::Input> token_batch(const Matrix& meta) const {
    std::vector<neural::Input> out;
    out.reserve(static_cast<std::size_t>(meta.rows()));
    for (Eigen::Index i = 0; i < meta.rows(); ++i) out.push_back(tokens(meta, i, bases, classes));
    return out;
  }

  ProbMatrix predict_proba(const Matrix& meta) const {
    require(meta.cols() == static_cast<Eigen::Index>(bases) * classes, "ensemble", "meta feature width mismatch");
    if (kind == MetaKind::logistic) return classical::predict_proba(*logistic, classical::to_sparse(meta));
    return neural::nn_predict_proba(*encoder, token_batch(meta));
  }
};

/// Trains the meta classifier on meta features; `val_meta` (may be empty)
/// only feeds the loss curve.
inline std::pair<MetaModel, neural::LossCurve> build_meta(const MetaSpec& spec, const Matrix& meta, std::span<const int> y,
                                                          int bases, int classes, const Matrix& val_meta = {},
                                                          std::span<const int> val_y = {}, std::uint64_t seed = 1) {
  require(meta.rows() == static_cast<Eigen::Index>(y.size()), "ensemble", "meta rows and labels differ in length");
  require(meta.cols() == static_cast<Eigen::Index>(bases) * classes, "ensemble", "meta feature width mismatch");
  require(val_meta.rows() == static_cast<Eigen::Index>(val_y.size()), "ensemble", "validation meta rows and labels differ");
  MetaModel m;
  m.kind = spec.kind;
  m.bases = bases;
  m.classes = classes;
  neural::LossCurve curve;
  if (spec.kind == MetaKind::logistic) {
    auto ls = spec.logistic;
    ls.seed = seed;
    const auto xs = classical::to_sparse(meta);
    const auto vs = classical::to_sparse(val_meta);
    m.logistic = classical::train_classical(classical::Kind::lr, xs, y, classes, ls, [&](int e, const classical::ClassicalModel& cm) {
      neural::LossPoint p;
      p.epoch = e;
      p.train_loss = metrics::cce_loss(classical::predict_proba(cm, xs), y).value;
      p.val_loss = val_y.empty() ? 0.0 : metrics::cce_loss(classical::predict_proba(cm, vs), val_y).value;
      curve.points.push_back(p);
    });
    return {std::move(m), std::move(curve)};
  }
  neural::TransformerConfig cfg;
  cfg.lineage = neural::Lineage::roberta;
  cfg.input = neural::InputKind::dense;
  cfg.input_dim = classes;
  cfg.max_len = bases;
  cfg.layers = spec.layers;
  cfg.hidden = spec.hidden;
  cfg.heads = spec.heads;
  cfg.dropout = spec.dropout;
  cfg.classes = classes;
  neural::LabeledInputs tr, va;
  tr.inputs = m.token_batch(meta);
  tr.labels.assign(y.begin(), y.end());
  va.inputs = m.token_batch(val_meta);
  va.labels.assign(val_y.begin(), val_y.end());
  auto opt = spec.train;
  opt.seed = seed;
  auto [enc, c] = neural::train_classifier(neural::init_transformer(cfg, seed), tr, va, opt);
  m.encoder = std::move(enc);
  return {std::move(m), std::move(c)};
}

// ------------------------------------------------------------------ stacking --

template <typename In>
struct StackSpec {
  std::vector<LearnerPtr<In>> bases;
  MetaSpec meta;
  int folds = 5;
  std::uint64_t seed = 1;
  // Trains bases on all rows and predicts those same rows (labelled leaky).
  bool leaky = false;
  // Optional deployment bases already fit on all training rows, in base order;
  // when set they replace the final full-data refit.
  std::vector<std::shared_ptr<BaseLearner<In>>> prefit;
};

/// Which rows each base fit saw, and which fit produced each meta row.
struct FoldLedger {
  std::vector<int> fold_of;  // per training row
  // fits[b][f]: rows used by base b's fit number f
  std::vector<std::vector<std::vector<std::size_t>>> fits;
  // producer[b][i]: index into fits[b] of the fit that predicted row i
  std::vector<std::vector<int>> producer;

  std::size_t fit_count(std::size_t base) const { return fits[base].size(); }
};

/// True when no meta row was produced by a fit that trained on that row.
inline bool leak_free(const FoldLedger& ledger) {
  for (std::size_t b = 0; b < ledger.fits.size(); ++b) {
    for (std::size_t i = 0; i < ledger.producer[b].size(); ++i) {
      const int f = ledger.producer[b][i];
      if (f < 0) return false;
      const auto& rows = ledger.fits[b][static_cast<std::size_t>(f)];
      if (std::binary_search(rows.begin(), rows.end(), i)) return false;
    }
  }
  return true;
}

/// Stratified fold assignment: each class's rows are shuffled and dealt
/// round-robin, so fold sizes differ by at most one per class.
inline std::vector<int> assign_folds(std::span<const int> y, int classes, int folds, std::uint64_t seed) {
  require(folds >= 2, "ensemble", "need at least 2 folds");
  const std::size_t n = y.size();
  require(n / static_cast<std::size_t>(folds) >= static_cast<std::size_t>(classes), "ensemble",
          "fold size " + std::to_string(n / static_cast<std::size_t>(folds)) + " is smaller than the class count " +
              std::to_string(classes));
  std::vector<int> fold(n, -1);
  int next = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (y[i] == c) rows.push_back(i);
    Rng rng = make_rng(seed, 0x666F6C64ULL + static_cast<std::uint64_t>(c));
    shuffle(rows, rng);
    for (std::size_t i : rows) {
      fold[i] = next;
      next = (next + 1) % folds;
    }
  }
  return fold;
}

template <typename In>
struct StackedModel {
  std::vector<std::shared_ptr<BaseLearner<In>>> bases;  // deployment fits on the full training set
  MetaModel meta;
  int classes = 0;
  std::uint64_t seed = 0;
  int folds = 0;
  bool leaky = false;
  FoldLedger ledger;
  Matrix train_meta;  // out-of-fold (or leaky) meta features the meta model saw
};

namespace detail {

/// Seed for one base fit, keyed by the base's name and its occurrence among
/// same-named bases, so reordering bases leaves every fit unchanged.
inline std::uint64_t fit_seed(std::uint64_t seed, std::string_view name, int occurrence, int fold) {
  return mix_seed(mix_seed(seed, fnv1a(name) + static_cast<std::uint64_t>(occurrence)), static_cast<std::uint64_t>(fold + 1));
}

template <typename In>
std::vector<In> gather(std::span<const In> x, const std::vector<std::size_t>& rows) {
  std::vector<In> out;
  out.reserve(rows.size());
  for (std::size_t i : rows) out.push_back(x[i]);
  return out;
}

}  // namespace detail

/// Stacking: (1) out-of-fold base predictions over k stratified folds build
/// the training meta features, (2) the meta classifier trains on them, (3)
/// each base is refit on the full training set for deployment. Validation
/// meta features come from the deployment bases.
template <typename In>
std::pair<StackedModel<In>, neural::LossCurve> stack_train(const StackSpec<In>& spec, std::span<const In> train_x,
                                                           std::span<const int> train_y, std::span<const In> val_x,
                                                           std::span<const int> val_y, int classes) {
  require(spec.bases.size() >= 2, "ensemble", "stacking needs at least 2 bases");
  require(train_x.size() == train_y.size() && val_x.size() == val_y.size(), "ensemble", "inputs and labels differ in length");
  const std::size_t n = train_x.size(), nb = spec.bases.size();
  StackedModel<In> model;
  model.classes = classes;
  model.seed = spec.seed;
  model.folds = spec.folds;
  model.leaky = spec.leaky;
  auto& ledger = model.ledger;
  ledger.fits.assign(nb, {});
  ledger.producer.assign(nb, std::vector<int>(n, -1));
  std::vector<ProbMatrix> oof(nb, ProbMatrix::Zero(static_cast<Eigen::Index>(n), classes));
  std::vector<int> occurrence(nb, 0);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t a = 0; a < b; ++a) occurrence[b] += spec.bases[a]->name() == spec.bases[b]->name();
  const auto fit_base = [&](std::size_t b, const std::vector<std::size_t>& rows, int fold) {
    auto learner = spec.bases[b]->fresh();
    const auto xs = detail::gather(train_x, rows);
    std::vector<int> ys;
    for (std::size_t i : rows) ys.push_back(train_y[i]);
    try {
      learner->fit(xs, ys, classes, detail::fit_seed(spec.seed, spec.bases[b]->name(), occurrence[b], fold));
    } catch (const Error& e) {
      throw Error("ensemble", "base " + std::to_string(b) + " (" + spec.bases[b]->name() + ") failed: " + e.what());
    }
    ledger.fits[b].push_back(rows);
    return std::shared_ptr<BaseLearner<In>>(std::move(learner));
  };
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (!spec.leaky) {
    ledger.fold_of = assign_folds(train_y, classes, spec.folds, spec.seed);
    for (int f = 0; f < spec.folds; ++f) {
      std::vector<std::size_t> in_rows, out_rows;
      for (std::size_t i = 0; i < n; ++i) (ledger.fold_of[i] == f ? out_rows : in_rows).push_back(i);
      for (std::size_t b = 0; b < nb; ++b) {
        const auto learner = fit_base(b, in_rows, f);
        const ProbMatrix p = learner->predict_proba(detail::gather(train_x, out_rows));
        for (std::size_t k = 0; k < out_rows.size(); ++k) {
          oof[b].row(static_cast<Eigen::Index>(out_rows[k])) = p.row(static_cast<Eigen::Index>(k));
          ledger.producer[b][out_rows[k]] = static_cast<int>(ledger.fits[b].size() - 1);
        }
      }
    }
    if (!leak_free(ledger)) throw Error("ensemble", "leakage audit failed: a meta row was produced by a base that saw it");
  } else {
    ledger.fold_of.assign(n, -1);
  }
  require(spec.prefit.empty() || spec.prefit.size() == nb, "ensemble", "prefit bases do not match the base list");
  for (std::size_t b = 0; b < nb; ++b) {
    if (spec.prefit.empty()) {
      model.bases.push_back(fit_base(b, all, spec.folds));
    } else {
      require(spec.prefit[b] && spec.prefit[b]->name() == spec.bases[b]->name(), "ensemble",
              "prefit base " + std::to_string(b) + " does not match '" + spec.bases[b]->name() + "'");
      model.bases.push_back(spec.prefit[b]);
      ledger.fits[b].push_back(all);
    }
    if (spec.leaky) {
      oof[b] = model.bases.back()->predict_proba(train_x);
      std::fill(ledger.producer[b].begin(), ledger.producer[b].end(), static_cast<int>(ledger.fits[b].size() - 1));
    }
  }
  model.train_meta = meta_features(oof);
  Matrix val_meta(0, static_cast<Eigen::Index>(nb) * classes);
  if (!val_x.empty()) {
    std::vector<ProbMatrix> vp;
    for (const auto& b : model.bases) vp.push_back(b->predict_proba(val_x));
    val_meta = meta_features(vp);
  }
  auto [meta, curve] = build_meta(spec.meta, model.train_meta, train_y, static_cast<int>(nb), classes, val_meta, val_y,
                                  mix_seed(spec.seed, 0x6D657461ULL));
  model.meta = std::move(meta);
  return {std::move(model), std::move(curve)};
}

/// Per-base probabilities for a batch, in base order.
template <typename In>
std::vector<ProbMatrix> base_predictions(const StackedModel<In>& m, std::span<const In> x) {
  std::vector<ProbMatrix> out;
  for (const auto& b : m.bases) out.push_back(b->predict_proba(x));
  return out;
}

template <typename In>
ProbMatrix stack_predict(const StackedModel<In>& m, std::span<const In> x) {
  return m.meta.predict_proba(meta_features(base_predictions(m, x)));
}

template <typename In>
LabelVector stack_predict_labels(const StackedModel<In>& m, std::span<const In> x) {
  return argmax_rows(stack_predict(m, x));
}

// --------------------------------------------------------------- persistence --

/// Directory layout: manifest.json (seed, folds, fold assignment, base
/// names), base_<b>.ckpt per base, meta.ckpt.
template <typename In>
void save_stacked(const StackedModel<In>& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format"] = "stackens-stack v1";
  j["seed"] = m.seed;
  j["folds"] = m.folds;
  j["classes"] = m.classes;
  j["leaky"] = m.leaky;
  j["fold_of"] = m.ledger.fold_of;
  j["meta_kind"] = to_string(m.meta.kind);
  for (std::size_t b = 0; b < m.bases.size(); ++b) {
    j["bases"].push_back(m.bases[b]->name());
    m.bases[b]->save(dir / ("base_" + std::to_string(b) + ".ckpt"));
  }
  if (m.meta.kind == MetaKind::logistic)
    classical::save(*m.meta.logistic, dir / "meta.ckpt");
  else
    neural::save_checkpoint(*m.meta.encoder, dir / "meta.ckpt");
  std::ofstream(dir / "manifest.json") << j.dump(2) << '\n';
}

/// Restores a stacked model; `prototypes` supplies one untrained learner per
/// base (matched by position and name).
template <typename In>
StackedModel<In> load_stacked(const std::filesystem::path& dir, const std::vector<LearnerPtr<In>>& prototypes) {
  std::ifstream f(dir / "manifest.json");
  require(static_cast<bool>(f), "ensemble", "missing manifest in '" + dir.string() + "'");
  const auto j = nlohmann::json::parse(f);
  require(j.value("format", "") == "stackens-stack v1", "ensemble", "unsupported stack manifest");
  const auto names = j.at("bases").get<std::vector<std::string>>();
  require(names.size() == prototypes.size(), "ensemble", "prototype count does not match the saved bases");
  StackedModel<In> m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.folds = j.at("folds").get<int>();
  m.classes = j.at("classes").get<int>();
  m.leaky = j.at("leaky").get<bool>();
  m.ledger.fold_of = j.at("fold_of").get<std::vector<int>>();
  for (std::size_t b = 0; b < names.size(); ++b) {
    require(prototypes[b]->name() == names[b], "ensemble", "base " + std::to_string(b) + " is '" + names[b] + "', prototype is '" +
                                                               prototypes[b]->name() + "'");
    auto learner = prototypes[b]->fresh();
    learner->load(dir / ("base_" + std::to_string(b) + ".ckpt"));
    m.bases.push_back(std::shared_ptr<BaseLearner<In>>(std::move(learner)));
  }
  m.meta.kind = meta_kind_from_string(j.at("meta_kind").get<std::string>());
  m.meta.bases = static_cast<int>(names.size());
  m.meta.classes = m.classes;
  if (m.meta.kind == MetaKind::logistic)
    m.meta.logistic = classical::load(dir / "meta.ckpt");
  else
    m.meta.encoder = neural::load_checkpoint(dir / "meta.ckpt");
  return m;
}

}  // namespace stackens::ensemble
