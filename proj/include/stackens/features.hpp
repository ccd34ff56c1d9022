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

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace stackens::features {

/// Sorted-index sparse vector; stored values are non-zero.
struct SparseVector {
  std::vector<int> indices;
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
  bool empty() const { return indices.empty(); }

  double squared_norm() const {
    double s = 0;
    for (double v : values) s += v * v;
    return s;
  }

  /// Dot product with a dense row of length >= max index + 1.
  template <typename Row>
  double dot(const Row& w) const {
    double s = 0;
    for (std::size_t k = 0; k < indices.size(); ++k) s += w(indices[k]) * values[k];
    return s;
  }

  double value_at(int index) const {
    const auto it = std::lower_bound(indices.begin(), indices.end(), index);
    if (it == indices.end() || *it != index) return 0.0;
    return values[static_cast<std::size_t>(it - indices.begin())];
  }

  bool operator==(const SparseVector&) const = default;
};

/// Builds a SparseVector from (index, value) pairs in any order; duplicate
/// indices are summed and zeros dropped.
inline SparseVector make_sparse(std::vector<std::pair<int, double>> entries) {
  std::sort(entries.begin(), entries.end());
  SparseVector v;
  for (const auto& [i, x] : entries) {
    if (!v.indices.empty() && v.indices.back() == i)
      v.values.back() += x;
    else {
      v.indices.push_back(i);
      v.values.push_back(x);
    }
  }
  SparseVector out;
  for (std::size_t k = 0; k < v.indices.size(); ++k)
    if (v.values[k] != 0.0) {
      out.indices.push_back(v.indices[k]);
      out.values.push_back(v.values[k]);
    }
  return out;
}

enum class Norm { l2, none };

inline const char* to_string(Norm n) { return n == Norm::l2 ? "l2" : "none"; }
inline Norm norm_from_string(std::string_view s) {
  if (s == "l2") return Norm::l2;
  if (s == "none") return Norm::none;
  throw Error("features", "unknown norm '" + std::string(s) + "' (expected l2 or none)");
}

struct TfidfOptions {
  std::size_t min_df = 1;
  Norm norm = Norm::l2;
  bool bigrams = false;
};

namespace detail {
inline std::vector<std::string> terms(std::span<const std::string> tokens, bool bigrams) {
  std::vector<std::string> out(tokens.begin(), tokens.end());
  if (bigrams)
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) out.push_back(tokens[i] + " " + tokens[i + 1]);
  return out;
}
}  // namespace detail

/// Smoothed tf-idf: idf(t) = ln((1 + N) / (1 + df(t))) + 1, tf = raw count,
/// optional L2 row normalisation. Columns follow lexicographic term order.
class TfidfModel {
 public:
  TfidfModel() = default;

  std::size_t dimension() const { return terms_.size(); }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<double>& idf() const { return idf_; }
  std::size_t doc_count() const { return doc_count_; }
  Norm norm() const { return norm_; }
  bool bigrams() const { return bigrams_; }

  int column(const std::string& term) const {
    const auto it = index_.find(term);
    return it == index_.end() ? -1 : it->second;
  }

  SparseVector transform(std::span<const std::string> tokens) const {
    std::map<int, double> counts;
    for (const auto& t : detail::terms(tokens, bigrams_)) {
      const int c = column(t);
      if (c >= 0) counts[c] += 1.0;
    }
    SparseVector v;
    for (const auto& [c, n] : counts) {
      v.indices.push_back(c);
      v.values.push_back(n * idf_[static_cast<std::size_t>(c)]);
    }
    if (norm_ == Norm::l2 && !v.empty()) {
      const double len = std::sqrt(v.squared_norm());
      for (double& x : v.values) x /= len;
    }
    return v;
  }

  std::vector<SparseVector> transform_all(const std::vector<std::vector<std::string>>& docs) const {
    std::vector<SparseVector> out;
    out.reserve(docs.size());
    for (const auto& d : docs) out.push_back(transform(d));
    return out;
  }

  /// `doc_count`, `norm`, `bigrams` header lines, then `term<TAB>index<TAB>idf`.
  std::string serialize() const {
    std::ostringstream f;
    f.precision(17);
    f << "stackens-tfidf v1\n"
      << "doc_count " << doc_count_ << "\n"
      << "norm " << to_string(norm_) << "\n"
      << "bigrams " << (bigrams_ ? 1 : 0) << "\n"
      << "terms " << terms_.size() << "\n";
    for (std::size_t i = 0; i < terms_.size(); ++i) f << terms_[i] << '\t' << i << '\t' << idf_[i] << '\n';
    return f.str();
  }

  static TfidfModel deserialize(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line, key, value;
    require(std::getline(in, line) && line == "stackens-tfidf v1", "features", "not a stackens tf-idf model");
    TfidfModel m;
    const auto field = [&](const char* name) {
      require(static_cast<bool>(std::getline(in, line)), "features", "truncated tf-idf model");
      std::istringstream ls(line);
      ls >> key >> value;
      require(key == name, "features", std::string("expected '") + name + "' line");
      return value;
    };
    m.doc_count_ = std::stoul(field("doc_count"));
    m.norm_ = norm_from_string(field("norm"));
    m.bigrams_ = field("bigrams") == "1";
    const std::size_t n = std::stoul(field("terms"));
    for (std::size_t i = 0; i < n; ++i) {
      require(static_cast<bool>(std::getline(in, line)), "features", "truncated term list");
      const auto t1 = line.find('\t'), t2 = line.rfind('\t');
      require(t1 != std::string::npos && t2 > t1, "features", "malformed term line");
      require(std::stoul(line.substr(t1 + 1, t2 - t1 - 1)) == i, "features", "term indices must be contiguous");
      m.terms_.push_back(line.substr(0, t1));
      m.idf_.push_back(std::stod(line.substr(t2 + 1)));
      m.index_.emplace(m.terms_.back(), static_cast<int>(i));
    }
    return m;
  }

  bool operator==(const TfidfModel& o) const {
    return terms_ == o.terms_ && idf_ == o.idf_ && doc_count_ == o.doc_count_ && norm_ == o.norm_ && bigrams_ == o.bigrams_;
  }

 private:
  friend TfidfModel fit_tfidf(const std::vector<std::vector<std::string>>&, const TfidfOptions&);

  std::vector<std::string> terms_;
  std::vector<double> idf_;
  std::unordered_map<std::string, int> index_;
  std::size_t doc_count_ = 0;
  Norm norm_ = Norm::l2;
  bool bigrams_ = false;
};

inline TfidfModel fit_tfidf(const std::vector<std::vector<std::string>>& corpus, const TfidfOptions& opt = {}) {
  require(!corpus.empty(), "features", "cannot fit tf-idf on an empty corpus");
  std::map<std::string, std::size_t> df;
  for (const auto& doc : corpus) {
    const auto t = detail::terms(doc, opt.bigrams);
    for (const auto& term : std::set<std::string>(t.begin(), t.end())) ++df[term];
  }
  TfidfModel m;
  m.doc_count_ = corpus.size();
  m.norm_ = opt.norm;
  m.bigrams_ = opt.bigrams;
  const double n = static_cast<double>(corpus.size());
  for (const auto& [term, count] : df) {
    if (count < opt.min_df) continue;
    m.index_.emplace(term, static_cast<int>(m.terms_.size()));
    m.terms_.push_back(term);
    m.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  require(!m.terms_.empty(), "features", "empty vocabulary after min_df filtering");
  return m;
}

}  // namespace stackens::features
