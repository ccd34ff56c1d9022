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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stackens {

/// Raised for every contract violation in the library. `stage` names the
/// pipeline step that failed ("corpus", "classical", ...), so the CLI can
/// print stage-tagged diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// N x C matrix whose rows are class distributions.
using ProbMatrix = Matrix;

using LabelVector = std::vector<int>;

/// splitmix64 finaliser; used to derive independent sub-seeds from a
/// (seed, tag) pair so that e.g. epoch e's masks depend only on (seed, e).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag = 0) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t tag = 0) { return Rng(mix_seed(seed, tag)); }

/// Uniform double in [0, 1) built from the raw generator output, so results do
/// not depend on the standard library's distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

/// Standard normal draw (Box-Muller on `uniform01`).
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Fisher-Yates shuffle driven by `uniform_index`.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Row>
int argmax(const Row& row) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(row.size()); ++c)
    if (row(c) > row(best)) best = c;
  return best;
}

/// Binary decision rule: probability of class 1 at or above 0.5 selects class 1.
inline int threshold_label(double p_class1) { return p_class1 >= 0.5 ? 1 : 0; }

/// Predicted labels: the 0.5 threshold on class 1 for two columns, argmax
/// otherwise. The two agree except at an exact 0.5 tie, which goes to class 1.
inline LabelVector argmax_rows(const ProbMatrix& p) {
  LabelVector out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    out[static_cast<std::size_t>(i)] = p.cols() == 2 ? threshold_label(p(i, 1)) : argmax(p.row(i));
  return out;
}

/// Numerically stable in-place softmax of every row.
inline void softmax_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

inline Matrix softmax_rows_copy(Matrix m) {
  softmax_rows(m);
  return m;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void require(bool cond, const char* stage, const std::string& what) {
  if (!cond) throw Error(stage, what);
}

}  // namespace stackens
