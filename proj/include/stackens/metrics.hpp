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

#include "stackens/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace stackens::metrics {

/// C x C counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes)
      : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {}

  int classes() const { return classes_; }
  std::int64_t& at(int truth, int pred) { return counts_[index(truth, pred)]; }
  std::int64_t at(int truth, int pred) const { return counts_[index(truth, pred)]; }

  std::int64_t total() const {
    std::int64_t n = 0;
    for (auto v : counts_) n += v;
    return n;
  }
  std::int64_t row_sum(int c) const {
    std::int64_t s = 0;
    for (int p = 0; p < classes_; ++p) s += at(c, p);
    return s;
  }
  std::int64_t col_sum(int c) const {
    std::int64_t s = 0;
    for (int t = 0; t < classes_; ++t) s += at(t, c);
    return s;
  }
  std::int64_t trace() const {
    std::int64_t s = 0;
    for (int c = 0; c < classes_; ++c) s += at(c, c);
    return s;
  }

  std::int64_t tp(int c) const { return at(c, c); }
  std::int64_t fp(int c) const { return col_sum(c) - tp(c); }
  std::int64_t fn(int c) const { return row_sum(c) - tp(c); }
  std::int64_t tn(int c) const { return total() - tp(c) - fp(c) - fn(c); }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t index(int t, int p) const { return static_cast<std::size_t>(t) * classes_ + p; }

  int classes_ = 0;
  std::vector<std::int64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, int classes) {
  require(!y_true.empty(), "metrics", "confusion of empty label vectors");
  require(y_true.size() == y_pred.size(), "metrics", "label vectors differ in length");
  require(classes >= 1, "metrics", "class count must be positive");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    require(t >= 0 && t < classes && p >= 0 && p < classes, "metrics",
            "label out of range at index " + std::to_string(i));
    ++cm.at(t, p);
  }
  return cm;
}

struct ScoreReport {
  std::vector<double> precision, recall, f1;  // per class
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double accuracy = 0;
  std::string averaging = "macro";
  // Set when any per-class score hit 0/0 and was reported as 0.
  bool has_undefined = false;

  nlohmann::json to_json() const {
    return {{"precision", precision},       {"recall", recall},
            {"f1", f1},                     {"macro_precision", macro_precision},
            {"macro_recall", macro_recall}, {"macro_f1", macro_f1},
            {"accuracy", accuracy},         {"averaging", averaging},
            {"zero_division_as_zero", has_undefined}};
  }
  static ScoreReport from_json(const nlohmann::json& j) {
    ScoreReport r;
    r.precision = j.at("precision").get<std::vector<double>>();
    r.recall = j.at("recall").get<std::vector<double>>();
    r.f1 = j.at("f1").get<std::vector<double>>();
    r.macro_precision = j.at("macro_precision");
    r.macro_recall = j.at("macro_recall");
    r.macro_f1 = j.at("macro_f1");
    r.accuracy = j.at("accuracy");
    r.averaging = j.at("averaging");
    r.has_undefined = j.at("zero_division_as_zero");
    return r;
  }
};

namespace detail {
inline double safe_ratio(std::int64_t num, std::int64_t den, bool& undefined) {
  if (den == 0) {
    undefined = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

/// Per-class precision TP/(TP+FP), recall TP/(TP+FN), F1 as their harmonic
/// mean, macro means over classes, accuracy trace/N. 0/0 is taken as 0.
inline ScoreReport classification_report(const ConfusionMatrix& cm) {
  const std::int64_t n = cm.total();
  require(n > 0, "metrics", "classification report of an empty confusion matrix");
  const int classes = cm.classes();
  ScoreReport r;
  r.precision.resize(classes);
  r.recall.resize(classes);
  r.f1.resize(classes);
  for (int c = 0; c < classes; ++c) {
    const std::int64_t tp = cm.tp(c), fp = cm.fp(c), fn = cm.fn(c);
    const double p = detail::safe_ratio(tp, tp + fp, r.has_undefined);
    const double rc = detail::safe_ratio(tp, tp + fn, r.has_undefined);
    double f = 0.0;
    if (p + rc > 0)
      f = 2.0 * p * rc / (p + rc);
    else
      r.has_undefined = true;
    r.precision[c] = p;
    r.recall[c] = rc;
    r.f1[c] = f;
    r.macro_precision += p;
    r.macro_recall += rc;
    r.macro_f1 += f;
  }
  r.macro_precision /= classes;
  r.macro_recall /= classes;
  r.macro_f1 /= classes;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(n);
  return r;
}

enum class LossKind { bce, cce, mse };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::bce: return "bce";
    case LossKind::cce: return "cce";
    case LossKind::mse: return "mse";
  }
  return "?";
}

struct LossValue {
  double value = 0;
  LossKind kind = LossKind::cce;
};

inline constexpr double kClampEps = 1e-12;

inline double clamp_prob(double p) { return std::clamp(p, kClampEps, 1.0 - kClampEps); }

/// Mean binary cross-entropy of positive-class probabilities against 0/1 labels.
inline LossValue bce_loss(std::span<const double> p, std::span<const int> y) {
  require(p.size() == y.size(), "metrics", "bce: length mismatch");
  require(!p.empty(), "metrics", "bce: empty input");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = clamp_prob(p[i]);
    s += y[i] ? std::log(q) : std::log(1.0 - q);
  }
  return {-s / static_cast<double>(p.size()), LossKind::bce};
}

/// Mean sparse categorical cross-entropy: -1/N sum_i ln P[i][y_i].
inline LossValue cce_loss(const ProbMatrix& p, std::span<const int> y) {
  require(static_cast<std::size_t>(p.rows()) == y.size(), "metrics", "cce: row count mismatch");
  require(!y.empty(), "metrics", "cce: empty input");
  double s = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const int c = y[static_cast<std::size_t>(i)];
    require(c >= 0 && c < p.cols(), "metrics", "cce: label out of range");
    s += std::log(clamp_prob(p(i, c)));
  }
  return {-s / static_cast<double>(p.rows()), LossKind::cce};
}

/// Mean over instances of the squared distance between the probability row
/// and the one-hot truth (summed over classes).
inline LossValue mse(const ProbMatrix& p, std::span<const int> y) {
  require(static_cast<std::size_t>(p.rows()) == y.size(), "metrics", "mse: row count mismatch");
  require(!y.empty(), "metrics", "mse: empty input");
  double s = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const int t = y[static_cast<std::size_t>(i)];
    require(t >= 0 && t < p.cols(), "metrics", "mse: label out of range");
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double d = p(i, c) - (c == t ? 1.0 : 0.0);
      s += d * d;
    }
  }
  return {s / static_cast<double>(p.rows()), LossKind::mse};
}

/// The training objective used for reporting: binary cross-entropy on the
/// class-1 column when C = 2, sparse categorical cross-entropy otherwise.
inline LossValue classification_loss(const ProbMatrix& p, std::span<const int> y) {
  if (p.cols() == 2) {
    std::vector<double> pos(static_cast<std::size_t>(p.rows()));
    for (Eigen::Index i = 0; i < p.rows(); ++i) pos[static_cast<std::size_t>(i)] = p(i, 1);
    return bce_loss(pos, y);
  }
  return cce_loss(p, y);
}

/// Convenience: argmax predictions, confusion, report.
inline ScoreReport score(const ProbMatrix& p, std::span<const int> y) {
  const LabelVector pred = argmax_rows(p);
  return classification_report(confusion(y, pred, static_cast<int>(p.cols())));
}

}  // namespace stackens::metrics
