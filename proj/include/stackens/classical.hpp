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
#include "stackens/features.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <queue>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace stackens::classical {

using features::SparseVector;

/// Rows of sparse features with a fixed column count.
struct SparseMatrix {
  std::vector<SparseVector> rows;
  int cols = 0;

  std::size_t size() const { return rows.size(); }
};

inline SparseMatrix to_sparse(const Matrix& dense) {
  SparseMatrix out;
  out.cols = static_cast<int>(dense.cols());
  for (Eigen::Index i = 0; i < dense.rows(); ++i) {
    SparseVector v;
    for (Eigen::Index j = 0; j < dense.cols(); ++j)
      if (dense(i, j) != 0.0) {
        v.indices.push_back(static_cast<int>(j));
        v.values.push_back(dense(i, j));
      }
    out.rows.push_back(std::move(v));
  }
  return out;
}

enum class Kind { lsvm, lr, rf, gb, lgbm, pac };

inline constexpr Kind kAllKinds[] = {Kind::lsvm, Kind::lr, Kind::rf, Kind::lgbm, Kind::gb, Kind::pac};

inline const char* to_string(Kind k) {
  switch (k) {
    case Kind::lsvm: return "LSVM";
    case Kind::lr: return "LR";
    case Kind::rf: return "RF";
    case Kind::gb: return "GB";
    case Kind::lgbm: return "LGBM";
    case Kind::pac: return "PAC";
  }
  return "?";
}

inline Kind kind_from_string(std::string_view s) {
  for (Kind k : kAllKinds)
    if (s == to_string(k)) return k;
  throw Error("classical", "unknown classifier kind '" + std::string(s) + "' (expected LSVM, LR, RF, GB, LGBM or PAC)");
}

inline bool is_linear(Kind k) { return k == Kind::lsvm || k == Kind::lr || k == Kind::pac; }

struct TrainSpec {
  int epochs = 50;
  double learning_rate = 0.1;
  double regularization = 1e-4;
  int tree_count = 100;  // RF trees, or boosting rounds
  int max_depth = 12;    // <= 0: unlimited
  int max_leaves = 31;   // leaf-wise growth only
  bool bootstrap = true;
  double leaf_l2 = 1.0;  // boosting leaf regularisation
  double min_child_weight = 1e-3;
  std::uint64_t seed = 1;

  static TrainSpec defaults(Kind k) {
    TrainSpec s;
    if (k == Kind::gb || k == Kind::lgbm) {
      s.max_depth = k == Kind::gb ? 4 : 0;
      s.learning_rate = 0.1;
    }
    return s;
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1, right = -1;
  int leaf = -1;  // row into Tree::leaf_values
};

/// Binary tree over sparse rows; a row goes left when x[feature] <= threshold
/// (absent features read as 0). Leaves hold `width` values.
struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<double> leaf_values;
  int width = 1;

  std::size_t leaf_count() const { return leaf_values.size() / static_cast<std::size_t>(width); }

  const double* evaluate(const SparseVector& x) const {
    int n = 0;
    while (nodes[static_cast<std::size_t>(n)].feature >= 0) {
      const auto& node = nodes[static_cast<std::size_t>(n)];
      n = x.value_at(node.feature) <= node.threshold ? node.left : node.right;
    }
    return &leaf_values[static_cast<std::size_t>(nodes[static_cast<std::size_t>(n)].leaf) * width];
  }

  int depth() const {
    std::function<int(int)> d = [&](int n) -> int {
      const auto& node = nodes[static_cast<std::size_t>(n)];
      return node.feature < 0 ? 0 : 1 + std::max(d(node.left), d(node.right));
    };
    return nodes.empty() ? 0 : d(0);
  }

  bool operator==(const Tree& o) const {
    if (width != o.width || leaf_values != o.leaf_values || nodes.size() != o.nodes.size()) return false;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto &a = nodes[i], &b = o.nodes[i];
      if (a.feature != b.feature || a.threshold != b.threshold || a.left != b.left || a.right != b.right || a.leaf != b.leaf)
        return false;
    }
    return true;
  }
};

struct ClassicalModel {
  Kind kind = Kind::lr;
  int classes = 0;
  int features = 0;
  // Linear kinds: rows x features weights plus bias; one row when classes == 2.
  Matrix weights;
  Vector bias;
  // RF: one tree per estimator, leaves hold class distributions.
  // GB/LGBM: `classes` trees per round, leaves hold shrunken scores.
  std::vector<Tree> trees;
  Vector base_score;

  bool operator==(const ClassicalModel& o) const {
    return kind == o.kind && classes == o.classes && features == o.features && weights == o.weights && bias == o.bias &&
           trees == o.trees && base_score == o.base_score;
  }
};

namespace detail {

inline void validate_training_data(const SparseMatrix& x, std::span<const int> y, int classes) {
  require(!x.rows.empty(), "classical", "empty training input");
  require(x.rows.size() == y.size(), "classical", "feature and label counts differ");
  require(classes >= 2, "classical", "need at least 2 classes");
  std::vector<bool> seen(static_cast<std::size_t>(classes), false);
  for (int c : y) {
    require(c >= 0 && c < classes, "classical", "label out of range");
    seen[static_cast<std::size_t>(c)] = true;
  }
  require(std::count(seen.begin(), seen.end(), true) >= 2, "classical", "training labels contain a single class");
  for (const auto& r : x.rows)
    for (std::size_t k = 0; k < r.indices.size(); ++k) {
      require(std::isfinite(r.values[k]), "classical", "non-finite feature value");
      require(r.indices[k] >= 0 && r.indices[k] < x.cols, "classical", "feature index out of range");
    }
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(seed, static_cast<std::uint64_t>(epoch));
  shuffle(order, rng);
  return order;
}

/// Linear scores rows x K for a linear model.
inline Matrix linear_scores(const ClassicalModel& m, const SparseMatrix& x) {
  Matrix s(static_cast<Eigen::Index>(x.size()), m.weights.rows());
  for (std::size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index k = 0; k < m.weights.rows(); ++k)
      s(static_cast<Eigen::Index>(i), k) = x.rows[i].dot(m.weights.row(k)) + m.bias(k);
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------- linear --

/// L2-regularised cross-entropy of a logistic/softmax model:
///   mean_i CE(softmax(W x_i + b), y_i) + regularization / 2 * ||W||^2.
/// With one weight row the model is binary logistic on the class-1 margin.
inline double lr_objective(const Matrix& w, const Vector& b, const SparseMatrix& x, std::span<const int> y,
                           double regularization) {
  double loss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (w.rows() == 1) {
      const double z = x.rows[i].dot(w.row(0)) + b(0);
      // -log sigmoid(z) for y = 1, -log(1 - sigmoid(z)) for y = 0
      const double s = y[i] ? -z : z;
      loss += s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    } else {
      RowVector z(w.rows());
      for (Eigen::Index k = 0; k < w.rows(); ++k) z(k) = x.rows[i].dot(w.row(k)) + b(k);
      const double mx = z.maxCoeff();
      loss += mx + std::log((z.array() - mx).exp().sum()) - z(y[i]);
    }
  }
  return loss / static_cast<double>(x.size()) + 0.5 * regularization * w.squaredNorm();
}

/// Analytic gradient of `lr_objective` with respect to (W, b).
inline std::pair<Matrix, Vector> lr_gradient(const Matrix& w, const Vector& b, const SparseMatrix& x,
                                             std::span<const int> y, double regularization) {
  Matrix gw = regularization * w;
  Vector gb = Vector::Zero(b.size());
  const double inv_n = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    RowVector err(w.rows());
    if (w.rows() == 1) {
      err(0) = sigmoid(x.rows[i].dot(w.row(0)) + b(0)) - (y[i] ? 1.0 : 0.0);
    } else {
      RowVector z(w.rows());
      for (Eigen::Index k = 0; k < w.rows(); ++k) z(k) = x.rows[i].dot(w.row(k)) + b(k);
      z = (z.array() - z.maxCoeff()).exp();
      err = z / z.sum();
      err(y[i]) -= 1.0;
    }
    for (Eigen::Index k = 0; k < w.rows(); ++k) {
      gb(k) += err(k) * inv_n;
      for (std::size_t t = 0; t < x.rows[i].indices.size(); ++t)
        gw(k, x.rows[i].indices[t]) += err(k) * x.rows[i].values[t] * inv_n;
    }
  }
  return {gw, gb};
}

/// Called after every epoch of a linear trainer with the current model.
using EpochCallback = std::function<void(int epoch, const ClassicalModel&)>;

namespace detail {

// Step size for epoch e: learning_rate / (1 + e).
inline double epoch_rate(const TrainSpec& s, int epoch) { return s.learning_rate / (1.0 + epoch); }

inline ClassicalModel train_lr(const SparseMatrix& x, std::span<const int> y, int classes, const TrainSpec& spec,
                               const EpochCallback& on_epoch) {
  ClassicalModel m;
  m.kind = Kind::lr;
  m.classes = classes;
  m.features = x.cols;
  const Eigen::Index k = classes == 2 ? 1 : classes;
  m.weights = Matrix::Zero(k, x.cols);
  m.bias = Vector::Zero(k);
  RowVector err(k), z(k);
  for (int e = 0; e < spec.epochs; ++e) {
    const double eta = epoch_rate(spec, e);
    for (std::size_t i : epoch_order(x.size(), spec.seed, static_cast<std::uint64_t>(e))) {
      const auto& row = x.rows[i];
      if (k == 1) {
        err(0) = sigmoid(row.dot(m.weights.row(0)) + m.bias(0)) - (y[i] ? 1.0 : 0.0);
      } else {
        for (Eigen::Index c = 0; c < k; ++c) z(c) = row.dot(m.weights.row(c)) + m.bias(c);
        z = (z.array() - z.maxCoeff()).exp();
        err = z / z.sum();
        err(y[i]) -= 1.0;
      }
      if (spec.regularization > 0) m.weights *= (1.0 - eta * spec.regularization);
      for (Eigen::Index c = 0; c < k; ++c) {
        m.bias(c) -= eta * err(c);
        for (std::size_t t = 0; t < row.indices.size(); ++t) m.weights(c, row.indices[t]) -= eta * err(c) * row.values[t];
      }
    }
    if (on_epoch) on_epoch(e, m);
  }
  return m;
}

inline std::vector<double> ovr_targets(std::span<const int> y, int positive) {
  std::vector<double> t(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) t[i] = y[i] == positive ? 1.0 : -1.0;
  return t;
}

// Averaged SGD on the L2-regularised hinge loss, one binary problem.
inline void train_hinge(const SparseMatrix& x, const std::vector<double>& t, const TrainSpec& spec, RowVector& w_avg,
                        double& b_avg) {
  RowVector w = RowVector::Zero(x.cols);
  double b = 0;
  w_avg = RowVector::Zero(x.cols);
  b_avg = 0;
  std::size_t steps = 0;
  for (int e = 0; e < spec.epochs; ++e) {
    const double eta = epoch_rate(spec, e);
    for (std::size_t i : epoch_order(x.size(), spec.seed, static_cast<std::uint64_t>(e))) {
      const auto& row = x.rows[i];
      const double margin = t[i] * (row.dot(w) + b);
      if (spec.regularization > 0) w *= (1.0 - eta * spec.regularization);
      if (margin < 1.0) {
        for (std::size_t k = 0; k < row.indices.size(); ++k) w(row.indices[k]) += eta * t[i] * row.values[k];
        b += eta * t[i];
      }
      ++steps;
      const double mix = 1.0 / static_cast<double>(steps);
      w_avg += mix * (w - w_avg);
      b_avg += mix * (b - b_avg);
    }
  }
}

/// One passive-aggressive step on the hinge loss with the bias folded in as a
/// constant feature: tau = loss / (||x||^2 + 1). Returns tau (0 when the
/// margin is already satisfied).
inline double pa_step(RowVector& w, double& b, const SparseVector& x, double target) {
  const double loss = std::max(0.0, 1.0 - target * (x.dot(w) + b));
  if (loss == 0.0) return 0.0;
  const double tau = loss / (x.squared_norm() + 1.0);
  for (std::size_t k = 0; k < x.indices.size(); ++k) w(x.indices[k]) += tau * target * x.values[k];
  b += tau * target;
  return tau;
}

inline void train_pa(const SparseMatrix& x, const std::vector<double>& t, const TrainSpec& spec, RowVector& w, double& b) {
  w = RowVector::Zero(x.cols);
  b = 0;
  for (int e = 0; e < spec.epochs; ++e)
    for (std::size_t i : epoch_order(x.size(), spec.seed, static_cast<std::uint64_t>(e))) pa_step(w, b, x.rows[i], t[i]);
}

inline ClassicalModel train_margin(Kind kind, const SparseMatrix& x, std::span<const int> y, int classes,
                                   const TrainSpec& spec) {
  ClassicalModel m;
  m.kind = kind;
  m.classes = classes;
  m.features = x.cols;
  const int k = classes == 2 ? 1 : classes;
  m.weights = Matrix::Zero(k, x.cols);
  m.bias = Vector::Zero(k);
  for (int c = 0; c < k; ++c) {
    const auto t = ovr_targets(y, classes == 2 ? 1 : c);
    RowVector w;
    double b = 0;
    if (kind == Kind::lsvm)
      train_hinge(x, t, spec, w, b);
    else
      train_pa(x, t, spec, w, b);
    m.weights.row(c) = w;
    m.bias(c) = b;
  }
  return m;
}

// ------------------------------------------------------------------ trees --

struct Entry {
  int feature;
  double value;
  int row;
};

struct SplitChoice {
  double gain = 0;
  int feature = -1;
  double threshold = 0;
};

/// Gini criterion over weighted class counts. score(S) = sum_c w_c^2 / W, so
/// maximising score(L) + score(R) - score(P) minimises weighted Gini impurity.
struct GiniCriterion {
  struct Stats {
    std::vector<double> w;
    double total = 0;
    double rows = 0;
  };
  std::span<const int> y;
  int classes;

  Stats zero() const { return {std::vector<double>(static_cast<std::size_t>(classes), 0.0), 0.0, 0.0}; }
  void add(Stats& s, int row, double weight) const {
    s.w[static_cast<std::size_t>(y[static_cast<std::size_t>(row)])] += weight;
    s.total += weight;
    s.rows += 1;
  }
  void add(Stats& s, const Stats& o) const {
    for (std::size_t c = 0; c < s.w.size(); ++c) s.w[c] += o.w[c];
    s.total += o.total;
    s.rows += o.rows;
  }
  Stats minus(const Stats& a, const Stats& b) const {
    Stats s = a;
    for (std::size_t c = 0; c < s.w.size(); ++c) s.w[c] -= b.w[c];
    s.total -= b.total;
    s.rows -= b.rows;
    return s;
  }
  double score(const Stats& s) const {
    if (s.total <= 0) return 0;
    double q = 0;
    for (double v : s.w) q += v * v;
    return q / s.total;
  }
  bool admissible(const Stats& l, const Stats& r) const { return l.rows >= 1 && r.rows >= 1; }
  bool pure(const Stats& s) const {
    return std::count_if(s.w.begin(), s.w.end(), [](double v) { return v > 0; }) <= 1;
  }
  void leaf(const Stats& s, std::vector<double>& out) const {
    for (double v : s.w) out.push_back(s.total > 0 ? v / s.total : 1.0 / classes);
  }
};

/// Second-order boosting criterion on (gradient, hessian) sums.
struct NewtonCriterion {
  struct Stats {
    double g = 0, h = 0, rows = 0;
  };
  std::span<const double> grad, hess;
  double l2 = 1.0;
  double min_child_weight = 1e-3;
  double shrinkage = 1.0;

  Stats zero() const { return {}; }
  void add(Stats& s, int row, double weight) const {
    s.g += weight * grad[static_cast<std::size_t>(row)];
    s.h += weight * hess[static_cast<std::size_t>(row)];
    s.rows += 1;
  }
  void add(Stats& s, const Stats& o) const {
    s.g += o.g;
    s.h += o.h;
    s.rows += o.rows;
  }
  Stats minus(const Stats& a, const Stats& b) const { return {a.g - b.g, a.h - b.h, a.rows - b.rows}; }
  double score(const Stats& s) const { return s.g * s.g / (s.h + l2); }
  bool admissible(const Stats& l, const Stats& r) const {
    return l.rows >= 1 && r.rows >= 1 && l.h >= min_child_weight && r.h >= min_child_weight;
  }
  bool pure(const Stats&) const { return false; }
  void leaf(const Stats& s, std::vector<double>& out) const { out.push_back(-shrinkage * s.g / (s.h + l2)); }
};

struct GrowOptions {
  int max_depth = 0;      // <= 0: unlimited
  int max_leaves = 0;     // > 0: best-first growth with this leaf budget
  int features_per_node = 0;  // > 0: random subset per node (at least this many visited)
  int min_rows_split = 2;
};

/// Grows one tree over rows with positive weight. Each node keeps its rows'
/// non-zero entries sorted by (feature, value), so split search is a linear
/// scan and children inherit sorted lists by filtering.
template <typename Criterion>
class TreeGrower {
 public:
  TreeGrower(const SparseMatrix& x, const Criterion& crit, GrowOptions opt, int leaf_width)
      : x_(x), crit_(crit), opt_(opt), width_(leaf_width) {}

  Tree grow(const std::vector<double>& weights, Rng* rng) {
    weights_ = &weights;
    rng_ = rng;
    Tree tree;
    tree.width = width_;
    Pending root;
    root.stats = crit_.zero();
    for (std::size_t i = 0; i < x_.size(); ++i) {
      if (weights[i] <= 0) continue;
      root.rows.push_back(static_cast<int>(i));
      crit_.add(root.stats, static_cast<int>(i), weights[i]);
      const auto& r = x_.rows[i];
      for (std::size_t k = 0; k < r.indices.size(); ++k) root.entries.push_back({r.indices[k], r.values[k], static_cast<int>(i)});
    }
    std::sort(root.entries.begin(), root.entries.end(), [](const Entry& a, const Entry& b) {
      return a.feature != b.feature ? a.feature < b.feature : (a.value != b.value ? a.value < b.value : a.row < b.row);
    });
    root.node = 0;
    root.depth = 0;
    tree.nodes.emplace_back();

    if (opt_.max_leaves > 0) {
      grow_best_first(tree, std::move(root));
    } else {
      std::vector<Pending> stack;
      stack.push_back(std::move(root));
      while (!stack.empty()) {
        Pending p = std::move(stack.back());
        stack.pop_back();
        const SplitChoice s = can_split(p) ? best_split(p) : SplitChoice{};
        if (s.feature < 0) {
          make_leaf(tree, p);
          continue;
        }
        auto [l, r] = apply_split(tree, p, s);
        stack.push_back(std::move(r));
        stack.push_back(std::move(l));
      }
    }
    return tree;
  }

 private:
  struct Pending {
    std::vector<int> rows;
    std::vector<Entry> entries;
    typename Criterion::Stats stats;
    int node = 0;
    int depth = 0;
  };

  bool can_split(const Pending& p) const {
    if (opt_.max_depth > 0 && p.depth >= opt_.max_depth) return false;
    if (static_cast<int>(p.rows.size()) < opt_.min_rows_split) return false;
    return !crit_.pure(p.stats);
  }

  void make_leaf(Tree& tree, const Pending& p) {
    auto& node = tree.nodes[static_cast<std::size_t>(p.node)];
    node.feature = -1;
    node.leaf = static_cast<int>(tree.leaf_count());
    crit_.leaf(p.stats, tree.leaf_values);
  }

  std::pair<Pending, Pending> apply_split(Tree& tree, Pending& p, const SplitChoice& s) {
    Pending l, r;
    l.stats = crit_.zero();
    r.stats = crit_.zero();
    l.depth = r.depth = p.depth + 1;
    // membership: a row goes right iff its value for s.feature exceeds the threshold
    std::unordered_map<int, bool> goes_right;
    for (const auto& e : p.entries)
      if (e.feature == s.feature) goes_right[e.row] = e.value > s.threshold;
    const bool zero_right = 0.0 > s.threshold;
    const auto right = [&](int row) {
      const auto it = goes_right.find(row);
      return it == goes_right.end() ? zero_right : it->second;
    };
    for (int row : p.rows) {
      Pending& child = right(row) ? r : l;
      child.rows.push_back(row);
      crit_.add(child.stats, row, (*weights_)[static_cast<std::size_t>(row)]);
    }
    for (const auto& e : p.entries) (right(e.row) ? r : l).entries.push_back(e);
    p.entries.clear();
    p.entries.shrink_to_fit();
    l.node = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    r.node = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    auto& node = tree.nodes[static_cast<std::size_t>(p.node)];
    node.feature = s.feature;
    node.threshold = s.threshold;
    node.left = l.node;
    node.right = r.node;
    return {std::move(l), std::move(r)};
  }

  // Scans one feature's sorted entries for the best threshold. Rows missing
  // from the entry list hold an implicit zero.
  void scan_feature(const Pending& p, std::size_t begin, std::size_t end, SplitChoice& best) const {
    using Stats = typename Criterion::Stats;
    const int feature = p.entries[begin].feature;
    Stats nonzero = crit_.zero();
    for (std::size_t k = begin; k < end; ++k)
      crit_.add(nonzero, p.entries[k].row, (*weights_)[static_cast<std::size_t>(p.entries[k].row)]);
    const Stats zeros = crit_.minus(p.stats, nonzero);
    const bool has_zeros = zeros.rows > 0.5;
    const double parent = crit_.score(p.stats);

    Stats left = crit_.zero();
    double prev_value = 0;
    bool have_prev = false;
    bool zeros_done = !has_zeros;
    const auto consider = [&](double next_value) {
      if (!have_prev) return;
      const Stats right = crit_.minus(p.stats, left);
      if (!crit_.admissible(left, right)) return;
      const double gain = crit_.score(left) + crit_.score(right) - parent;
      if (gain > best.gain + 1e-12) {
        best.gain = gain;
        best.feature = feature;
        best.threshold = 0.5 * (prev_value + next_value);
        if (best.threshold == next_value) best.threshold = prev_value;
      }
    };
    std::size_t k = begin;
    while (k < end || !zeros_done) {
      const bool take_zeros = !zeros_done && (k >= end || p.entries[k].value > 0.0);
      if (take_zeros) {
        consider(0.0);
        crit_.add(left, zeros);
        prev_value = 0.0;
        have_prev = true;
        zeros_done = true;
        continue;
      }
      const double v = p.entries[k].value;
      consider(v);
      while (k < end && p.entries[k].value == v) {
        crit_.add(left, p.entries[k].row, (*weights_)[static_cast<std::size_t>(p.entries[k].row)]);
        ++k;
      }
      prev_value = v;
      have_prev = true;
    }
  }

  SplitChoice best_split(const Pending& p) {
    // feature -> [begin, end) within p.entries
    std::vector<std::pair<int, std::pair<std::size_t, std::size_t>>> ranges;
    for (std::size_t k = 0; k < p.entries.size();) {
      std::size_t e = k;
      while (e < p.entries.size() && p.entries[e].feature == p.entries[k].feature) ++e;
      ranges.push_back({p.entries[k].feature, {k, e}});
      k = e;
    }
    SplitChoice best;
    if (opt_.features_per_node <= 0 || rng_ == nullptr) {
      for (const auto& [f, range] : ranges) scan_feature(p, range.first, range.second, best);
      return best;
    }
    // Random feature order via a sparse Fisher-Yates over [0, cols). Keep
    // drawing past the budget until some feature yields a valid split.
    std::unordered_map<int, int> swapped;
    const auto at = [&](int i) {
      const auto it = swapped.find(i);
      return it == swapped.end() ? i : it->second;
    };
    const int d = x_.cols;
    for (int visited = 0; visited < d; ++visited) {
      if (visited >= opt_.features_per_node && best.feature >= 0) break;
      const int j = visited + static_cast<int>(uniform_index(*rng_, static_cast<std::size_t>(d - visited)));
      const int f = at(j);
      swapped[j] = at(visited);
      swapped[visited] = f;
      const auto it = std::lower_bound(ranges.begin(), ranges.end(), f,
                                       [](const auto& r, int feat) { return r.first < feat; });
      if (it == ranges.end() || it->first != f) continue;  // constant zero in this node
      scan_feature(p, it->second.first, it->second.second, best);
    }
    return best;
  }

  void grow_best_first(Tree& tree, Pending root) {
    struct Candidate {
      double gain;
      int node;
      std::size_t slot;
      bool operator<(const Candidate& o) const { return gain != o.gain ? gain < o.gain : node > o.node; }
    };
    std::vector<Pending> pending;
    std::vector<SplitChoice> choice;
    std::priority_queue<Candidate> heap;
    const auto push = [&](Pending p) {
      const SplitChoice s = can_split(p) ? best_split(p) : SplitChoice{};
      pending.push_back(std::move(p));
      choice.push_back(s);
      if (s.feature >= 0) heap.push({s.gain, pending.back().node, pending.size() - 1});
    };
    push(std::move(root));
    int leaves = 1;
    std::vector<bool> expanded;
    while (!heap.empty() && leaves < opt_.max_leaves) {
      const Candidate c = heap.top();
      heap.pop();
      auto [l, r] = apply_split(tree, pending[c.slot], choice[c.slot]);
      choice[c.slot].feature = -2;  // expanded
      ++leaves;
      push(std::move(l));
      push(std::move(r));
    }
    for (std::size_t i = 0; i < pending.size(); ++i)
      if (choice[i].feature != -2) make_leaf(tree, pending[i]);
  }

  const SparseMatrix& x_;
  const Criterion& crit_;
  GrowOptions opt_;
  int width_;
  const std::vector<double>* weights_ = nullptr;
  Rng* rng_ = nullptr;
};

inline ClassicalModel train_forest(const SparseMatrix& x, std::span<const int> y, int classes, const TrainSpec& spec) {
  ClassicalModel m;
  m.kind = Kind::rf;
  m.classes = classes;
  m.features = x.cols;
  const GiniCriterion crit{y, classes};
  GrowOptions opt;
  opt.max_depth = spec.max_depth;
  opt.features_per_node = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(x.cols))));
  for (int t = 0; t < spec.tree_count; ++t) {
    Rng rng = make_rng(spec.seed, 0x7265650000ULL + static_cast<std::uint64_t>(t));
    std::vector<double> weights(x.size(), spec.bootstrap ? 0.0 : 1.0);
    if (spec.bootstrap)
      for (std::size_t i = 0; i < x.size(); ++i) weights[uniform_index(rng, x.size())] += 1.0;
    TreeGrower<GiniCriterion> grower(x, crit, opt, classes);
    m.trees.push_back(grower.grow(weights, &rng));
  }
  return m;
}

inline Matrix boosted_scores(const ClassicalModel& m, const SparseMatrix& x, int rounds = -1) {
  const int k = m.classes;
  Matrix f(static_cast<Eigen::Index>(x.size()), k);
  for (Eigen::Index i = 0; i < f.rows(); ++i) f.row(i) = m.base_score.transpose();
  const int n_rounds = static_cast<int>(m.trees.size()) / k;
  const int use = rounds < 0 ? n_rounds : std::min(rounds, n_rounds);
  for (int r = 0; r < use; ++r)
    for (int c = 0; c < k; ++c) {
      const Tree& tree = m.trees[static_cast<std::size_t>(r * k + c)];
      for (std::size_t i = 0; i < x.size(); ++i) f(static_cast<Eigen::Index>(i), c) += tree.evaluate(x.rows[i])[0];
    }
  return f;
}

inline ClassicalModel train_boosting(Kind kind, const SparseMatrix& x, std::span<const int> y, int classes,
                                     const TrainSpec& spec) {
  ClassicalModel m;
  m.kind = kind;
  m.classes = classes;
  m.features = x.cols;
  const std::size_t n = x.size();
  // log class priors, floored for classes absent from the training rows
  m.base_score = Vector::Zero(classes);
  {
    std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
    for (int c : y) counts[static_cast<std::size_t>(c)] += 1;
    for (int c = 0; c < classes; ++c)
      m.base_score(c) = std::log(std::max(counts[static_cast<std::size_t>(c)], 0.5) / static_cast<double>(n));
  }
  GrowOptions opt;
  if (kind == Kind::lgbm) {
    opt.max_leaves = spec.max_leaves;
    opt.max_depth = spec.max_depth;
  } else {
    opt.max_depth = spec.max_depth;
  }
  Matrix f(static_cast<Eigen::Index>(n), classes);
  for (Eigen::Index i = 0; i < f.rows(); ++i) f.row(i) = m.base_score.transpose();
  const std::vector<double> weights(n, 1.0);
  std::vector<double> grad(n), hess(n);
  for (int round = 0; round < spec.tree_count; ++round) {
    const Matrix p = softmax_rows_copy(f);
    std::vector<Tree> round_trees;
    for (int c = 0; c < classes; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        const double pi = p(static_cast<Eigen::Index>(i), c);
        grad[i] = pi - (y[i] == c ? 1.0 : 0.0);
        hess[i] = std::max(pi * (1.0 - pi), 1e-16);
      }
      NewtonCriterion crit{grad, hess, spec.leaf_l2, spec.min_child_weight, spec.learning_rate};
      TreeGrower<NewtonCriterion> grower(x, crit, opt, 1);
      round_trees.push_back(grower.grow(weights, nullptr));
    }
    for (int c = 0; c < classes; ++c) {
      const Tree& tree = round_trees[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < n; ++i) f(static_cast<Eigen::Index>(i), c) += tree.evaluate(x.rows[i])[0];
      m.trees.push_back(std::move(round_trees[static_cast<std::size_t>(c)]));
    }
  }
  return m;
}

}  // namespace detail

/// Trains one of the six baseline kinds. Deterministic for a fixed spec.seed.
inline ClassicalModel train_classical(Kind kind, const SparseMatrix& x, std::span<const int> y, int classes,
                                      const TrainSpec& spec, const EpochCallback& on_epoch = {}) {
  detail::validate_training_data(x, y, classes);
  require(spec.epochs > 0 && spec.learning_rate >= 0 && spec.regularization >= 0 && spec.tree_count > 0, "classical",
          "training spec values must be positive");
  switch (kind) {
    case Kind::lr: return detail::train_lr(x, y, classes, spec, on_epoch);
    case Kind::lsvm:
    case Kind::pac: return detail::train_margin(kind, x, y, classes, spec);
    case Kind::rf: return detail::train_forest(x, y, classes, spec);
    case Kind::gb:
    case Kind::lgbm: return detail::train_boosting(kind, x, y, classes, spec);
  }
  throw Error("classical", "unhandled kind");
}

/// Row-stochastic class probabilities.
///   LR: softmax (binary: logistic) of the scores.
///   LSVM, PAC: logistic link on the margin when binary, softmax over the
///   one-vs-rest margins otherwise.
///   RF: mean of leaf class frequencies. GB, LGBM: softmax of boosted scores.
inline ProbMatrix predict_proba(const ClassicalModel& m, const SparseMatrix& x) {
  require(x.cols == m.features, "classical",
          "feature dimension mismatch: model has " + std::to_string(m.features) + ", input has " + std::to_string(x.cols));
  const auto n = static_cast<Eigen::Index>(x.size());
  ProbMatrix p(n, m.classes);
  if (is_linear(m.kind)) {
    const Matrix s = detail::linear_scores(m, x);
    if (m.weights.rows() == 1) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double q = sigmoid(s(i, 0));
        p(i, 0) = 1.0 - q;
        p(i, 1) = q;
      }
    } else {
      p = softmax_rows_copy(s);
    }
    return p;
  }
  if (m.kind == Kind::rf) {
    p.setZero();
    for (const Tree& t : m.trees)
      for (Eigen::Index i = 0; i < n; ++i) {
        const double* leaf = t.evaluate(x.rows[static_cast<std::size_t>(i)]);
        for (int c = 0; c < m.classes; ++c) p(i, c) += leaf[c];
      }
    p /= static_cast<double>(m.trees.size());
    for (Eigen::Index i = 0; i < n; ++i) p.row(i) /= p.row(i).sum();
    return p;
  }
  return softmax_rows_copy(detail::boosted_scores(m, x));
}

inline LabelVector predict(const ClassicalModel& m, const SparseMatrix& x) { return argmax_rows(predict_proba(m, x)); }

/// Training-set cross-entropy after each boosting round (GB/LGBM only).
inline std::vector<double> boosting_loss_trace(const ClassicalModel& m, const SparseMatrix& x, std::span<const int> y) {
  require(m.kind == Kind::gb || m.kind == Kind::lgbm, "classical", "loss trace needs a boosted model");
  std::vector<double> out;
  const int rounds = static_cast<int>(m.trees.size()) / m.classes;
  for (int r = 0; r <= rounds; ++r) {
    const Matrix p = softmax_rows_copy(detail::boosted_scores(m, x, r));
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s -= std::log(std::max(p(static_cast<Eigen::Index>(i), y[i]), 1e-300));
    out.push_back(s / static_cast<double>(y.size()));
  }
  return out;
}

// ---------------------------------------------------------- persistence --

/// Text container "stackens-classical v1": kind, shapes, then either the
/// weight rows and bias or every tree (nodes, then leaf values). Doubles are
/// written with 17 significant digits so a reload is exact.
inline std::string serialize(const ClassicalModel& m) {
  std::ostringstream f;
  f.precision(17);
  f << "stackens-classical v1\n"
    << "kind " << to_string(m.kind) << "\n"
    << "classes " << m.classes << "\n"
    << "features " << m.features << "\n";
  if (is_linear(m.kind)) {
    f << "linear " << m.weights.rows() << ' ' << m.weights.cols() << "\n";
    for (Eigen::Index r = 0; r < m.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.weights.cols(); ++c) f << (c ? " " : "") << m.weights(r, c);
      f << "\n";
    }
    for (Eigen::Index r = 0; r < m.bias.size(); ++r) f << (r ? " " : "") << m.bias(r);
    f << "\n";
  } else {
    f << "base " << m.base_score.size();
    for (Eigen::Index c = 0; c < m.base_score.size(); ++c) f << ' ' << m.base_score(c);
    f << "\ntrees " << m.trees.size() << "\n";
    for (const Tree& t : m.trees) {
      f << "tree " << t.nodes.size() << ' ' << t.width << ' ' << t.leaf_count() << "\n";
      for (const auto& nd : t.nodes) f << nd.feature << ' ' << nd.threshold << ' ' << nd.left << ' ' << nd.right << ' ' << nd.leaf << "\n";
      for (std::size_t i = 0; i < t.leaf_values.size(); ++i) f << (i ? " " : "") << t.leaf_values[i];
      f << "\n";
    }
  }
  return f.str();
}

inline ClassicalModel deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line, key;
  require(std::getline(in, line) && line == "stackens-classical v1", "classical", "not a stackens classical model");
  ClassicalModel m;
  std::string kind;
  in >> key >> kind;
  m.kind = kind_from_string(kind);
  in >> key >> m.classes >> key >> m.features;
  const auto read_double = [&] {
    std::string tok;
    require(static_cast<bool>(in >> tok), "classical", "truncated model");
    return std::stod(tok);
  };
  if (is_linear(m.kind)) {
    Eigen::Index rows = 0, cols = 0;
    in >> key >> rows >> cols;
    require(key == "linear", "classical", "malformed linear block");
    m.weights.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m.weights(r, c) = read_double();
    m.bias.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) m.bias(r) = read_double();
  } else {
    Eigen::Index base = 0;
    in >> key >> base;
    require(key == "base", "classical", "malformed tree model");
    m.base_score.resize(base);
    for (Eigen::Index c = 0; c < base; ++c) m.base_score(c) = read_double();
    std::size_t n_trees = 0;
    in >> key >> n_trees;
    for (std::size_t t = 0; t < n_trees; ++t) {
      Tree tree;
      std::size_t nodes = 0, leaves = 0;
      in >> key >> nodes >> tree.width >> leaves;
      require(key == "tree", "classical", "malformed tree header");
      tree.nodes.resize(nodes);
      for (auto& nd : tree.nodes) {
        in >> nd.feature;
        nd.threshold = read_double();
        in >> nd.left >> nd.right >> nd.leaf;
      }
      tree.leaf_values.resize(leaves * static_cast<std::size_t>(tree.width));
      for (double& v : tree.leaf_values) v = read_double();
      m.trees.push_back(std::move(tree));
    }
  }
  require(!in.fail(), "classical", "malformed model file");
  return m;
}

inline void save(const ClassicalModel& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "classical", "cannot write '" + path.string() + "'");
  f << serialize(m);
}

inline ClassicalModel load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "classical", "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace stackens::classical
