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

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace stackens::corpus {

struct LabeledDocument {
  std::string text;
  std::string label;

  bool operator==(const LabeledDocument&) const = default;
};

namespace detail {
inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}
}  // namespace detail

/// An ordered, immutable collection of labelled documents with at least two
/// distinct labels.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::string name, std::vector<LabeledDocument> docs, std::size_t dropped = 0)
      : Dataset(std::move(name), std::move(docs), dropped, 2) {}

  const std::string& name() const { return name_; }
  const std::vector<LabeledDocument>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  const LabeledDocument& operator[](std::size_t i) const { return docs_[i]; }
  /// Rows skipped at load time because text or label was empty.
  std::size_t dropped() const { return dropped_; }

  Dataset subset(std::string name, std::span<const std::size_t> rows) const {
    std::vector<LabeledDocument> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(docs_.at(r));
    // a slice of a valid dataset may legitimately hold a single label
    return Dataset(std::move(name), std::move(out), 0, 0);
  }

  bool operator==(const Dataset& o) const { return name_ == o.name_ && docs_ == o.docs_; }

 private:
  Dataset(std::string name, std::vector<LabeledDocument> docs, std::size_t dropped, std::size_t min_labels)
      : name_(std::move(name)), docs_(std::move(docs)), dropped_(dropped) {
    std::set<std::string_view> labels;
    for (const auto& d : docs_) {
      require(!detail::blank(d.text), "corpus", "document text is empty");
      require(!detail::blank(d.label), "corpus", "document label is empty");
      labels.insert(d.label);
    }
    require(labels.size() >= min_labels, "corpus",
            "dataset '" + name_ + "' needs at least 2 distinct labels, found " + std::to_string(labels.size()));
  }

  std::string name_;
  std::vector<LabeledDocument> docs_;
  std::size_t dropped_ = 0;
};

/// RFC-4180 reader: quoted fields may contain separators, doubled quotes and
/// line breaks. Returns rows of raw fields.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view in) {
  if (in.starts_with("\xEF\xBB\xBF")) in.remove_prefix(3);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  std::size_t line = 1;
  std::size_t i = 0;
  bool row_has_content = false;
  const auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
  };
  const auto end_row = [&] {
    end_field();
    if (row_has_content || row.size() > 1 || !row.front().empty()) rows.push_back(std::move(row));
    row.clear();
    row_has_content = false;
  };
  while (i < in.size()) {
    char c = in[i];
    if (c == '"' && field.empty()) {
      // quoted field
      row_has_content = true;
      const std::size_t start_line = line;
      ++i;
      while (true) {
        if (i >= in.size()) throw Error("corpus", "malformed CSV: unterminated quote starting on line " + std::to_string(start_line));
        if (in[i] == '"') {
          if (i + 1 < in.size() && in[i + 1] == '"') {
            field.push_back('"');
            i += 2;
            continue;
          }
          ++i;
          break;
        }
        if (in[i] == '\n') ++line;
        field.push_back(in[i++]);
      }
      if (i < in.size() && in[i] != ',' && in[i] != '\n' && in[i] != '\r')
        throw Error("corpus", "malformed CSV: text after closing quote on line " + std::to_string(line));
      continue;
    }
    if (c == ',') {
      row_has_content = true;
      end_field();
      ++i;
    } else if (c == '\r' || c == '\n') {
      end_row();
      if (c == '\r' && i + 1 < in.size() && in[i + 1] == '\n') ++i;
      ++i;
      ++line;
    } else if (c == '"') {
      throw Error("corpus", "malformed CSV: stray quote inside unquoted field on line " + std::to_string(line));
    } else {
      row_has_content = true;
      field.push_back(c);
      ++i;
    }
  }
  if (row_has_content || !field.empty()) end_row();
  return rows;
}

/// Quote a field only when it needs it.
inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string read_file(const std::filesystem::path& path, const char* stage) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), stage, "cannot open file '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Load one document per data row. Rows whose text or label is blank are
/// dropped and counted in `Dataset::dropped()`.
inline Dataset load_csv(const std::filesystem::path& path, const std::string& text_column = "text",
                        const std::string& label_column = "label") {
  require(std::filesystem::exists(path), "corpus", "missing file '" + path.string() + "'");
  const auto rows = parse_csv(read_file(path, "corpus"));
  require(!rows.empty(), "corpus", "missing header row in '" + path.string() + "'");
  const auto& header = rows.front();
  const auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    require(it != header.end(), "corpus", "missing column '" + name + "' in '" + path.string() + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t tc = column(text_column), lc = column(label_column);
  std::vector<LabeledDocument> docs;
  std::size_t dropped = 0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() <= std::max(tc, lc) || detail::blank(row[tc]) || detail::blank(row[lc])) {
      ++dropped;
      continue;
    }
    docs.push_back({row[tc], row[lc]});
  }
  require(!docs.empty(), "corpus", "zero usable rows in '" + path.string() + "'");
  return Dataset(path.stem().string(), std::move(docs), dropped);
}

/// Bijective class-name <-> id map; ids follow lexicographic name order.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::string> names) : names_(std::move(names)) {
    std::sort(names_.begin(), names_.end());
    names_.erase(std::unique(names_.begin(), names_.end()), names_.end());
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  int id(const std::string& name) const {
    const auto it = std::lower_bound(names_.begin(), names_.end(), name);
    require(it != names_.end() && *it == name, "corpus", "unknown label '" + name + "'");
    return static_cast<int>(it - names_.begin());
  }
  bool operator==(const LabelMap&) const = default;

 private:
  std::vector<std::string> names_;
};

inline std::pair<LabelMap, LabelVector> encode_labels(const Dataset& d) {
  std::vector<std::string> names;
  for (const auto& doc : d.documents()) names.push_back(doc.label);
  LabelMap map(std::move(names));
  LabelVector ids;
  ids.reserve(d.size());
  for (const auto& doc : d.documents()) ids.push_back(map.id(doc.label));
  return {std::move(map), std::move(ids)};
}

inline LabelVector encode_with(const LabelMap& map, const Dataset& d) {
  LabelVector ids;
  ids.reserve(d.size());
  for (const auto& doc : d.documents()) ids.push_back(map.id(doc.label));
  return ids;
}

inline std::map<std::string, std::size_t> class_distribution(const Dataset& d) {
  std::map<std::string, std::size_t> out;
  for (const auto& doc : d.documents()) ++out[doc.label];
  return out;
}

struct SplitRatios {
  double train = 0.8, val = 0.1, test = 0.1;
};

/// Row indices of each part, each sorted ascending.
struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

namespace detail {

/// Rounds the class x part quota matrix to integers so that every entry is
/// the floor or ceiling of its quota while row sums (class sizes) and column
/// sums (part sizes) are met exactly. Such a rounding always exists when the
/// quota matrix has integral margins; it is found as a unit-capacity flow.
inline std::vector<std::array<std::size_t, 3>> round_quotas(const std::vector<std::size_t>& class_sizes,
                                                             const std::array<std::size_t, 3>& part_sizes,
                                                             std::size_t total) {
  const std::size_t k = class_sizes.size();
  std::vector<std::array<std::size_t, 3>> x(k);
  std::vector<std::array<bool, 3>> fractional(k);
  std::vector<std::size_t> class_left(k);
  std::array<std::size_t, 3> part_left = part_sizes;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t used = 0;
    for (int s = 0; s < 3; ++s) {
      const std::size_t num = class_sizes[c] * part_sizes[s];
      x[c][s] = num / total;
      fractional[c][s] = num % total != 0;
      used += x[c][s];
      part_left[s] -= x[c][s];
    }
    class_left[c] = class_sizes[c] - used;
  }
  // Augmenting paths on source -> class -> part -> sink. An edge class->part
  // carries at most one unit and exists only where the quota is fractional;
  // augmenting paths may also undo an earlier unit (part -> class).
  while (true) {
    std::size_t need = 0;
    for (auto v : class_left) need += v;
    if (need == 0) break;
    // BFS over nodes: classes [0,k), parts [k, k+3)
    std::vector<long> parent(k + 3, -2);
    std::vector<std::size_t> queue;
    for (std::size_t c = 0; c < k; ++c)
      if (class_left[c] > 0) {
        parent[c] = -1;
        queue.push_back(c);
      }
    long sink_part = -1;
    for (std::size_t qi = 0; qi < queue.size() && sink_part < 0; ++qi) {
      const std::size_t u = queue[qi];
      if (u < k) {
        for (int s = 0; s < 3; ++s) {
          const std::size_t v = k + s;
          if (parent[v] != -2 || !fractional[u][s]) continue;
          const std::size_t floor_q = class_sizes[u] * part_sizes[s] / total;
          if (x[u][s] != floor_q) continue;  // already rounded up
          parent[v] = static_cast<long>(u);
          if (part_left[s] > 0) {
            sink_part = static_cast<long>(v);
            break;
          }
          queue.push_back(v);
        }
      } else {
        const int s = static_cast<int>(u - k);
        for (std::size_t c = 0; c < k; ++c) {
          if (parent[c] != -2 || !fractional[c][s]) continue;
          const std::size_t floor_q = class_sizes[c] * part_sizes[s] / total;
          if (x[c][s] == floor_q) continue;  // nothing to undo
          parent[c] = static_cast<long>(u);
          queue.push_back(c);
        }
      }
    }
    require(sink_part >= 0, "corpus", "internal: stratified rounding failed");
    long v = sink_part;
    --part_left[static_cast<std::size_t>(v) - k];
    while (true) {
      const long u = parent[static_cast<std::size_t>(v)];  // class feeding part v
      ++x[static_cast<std::size_t>(u)][static_cast<std::size_t>(v) - k];
      const long w = parent[static_cast<std::size_t>(u)];
      if (w == -1) {
        --class_left[static_cast<std::size_t>(u)];
        break;
      }
      --x[static_cast<std::size_t>(u)][static_cast<std::size_t>(w) - k];  // undo u -> part w
      v = w;
    }
  }
  return x;
}

}  // namespace detail

/// Stratified, seeded partition. Part sizes are rounded from the ratios, and
/// every class lands in each part within one document of its global share.
inline SplitIndices split_indices(const Dataset& d, SplitRatios ratios, std::uint64_t seed) {
  require(ratios.train > 0 && ratios.val >= 0 && ratios.test > 0, "corpus", "split ratios must be positive");
  require(std::abs(ratios.train + ratios.val + ratios.test - 1.0) <= 1e-9, "corpus", "split ratios must sum to 1");
  const std::size_t n = d.size();
  const std::size_t parts = ratios.val > 0 ? 3 : 2;

  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < n; ++i) by_label[d[i].label].push_back(i);
  for (const auto& [label, rows] : by_label)
    require(rows.size() >= parts, "corpus",
            "class '" + label + "' has " + std::to_string(rows.size()) + " documents, fewer than the " +
                std::to_string(parts) + " split parts");

  const auto round_size = [n](double r) { return static_cast<std::size_t>(std::llround(r * static_cast<double>(n))); };
  const std::size_t n_test = round_size(ratios.test);
  const std::size_t n_val = ratios.val > 0 ? round_size(ratios.val) : 0;
  require(n_test + n_val < n, "corpus", "split leaves no training documents");
  const std::array<std::size_t, 3> part_sizes{n - n_val - n_test, n_val, n_test};

  std::vector<std::size_t> class_sizes;
  for (const auto& [label, rows] : by_label) class_sizes.push_back(rows.size());
  const auto counts = detail::round_quotas(class_sizes, part_sizes, n);

  SplitIndices out;
  std::size_t c = 0;
  for (auto& [label, rows] : by_label) {
    Rng rng = make_rng(seed, c);
    shuffle(rows, rng);
    std::size_t pos = 0;
    for (std::size_t j = 0; j < counts[c][2]; ++j) out.test.push_back(rows[pos++]);
    for (std::size_t j = 0; j < counts[c][1]; ++j) out.val.push_back(rows[pos++]);
    while (pos < rows.size()) out.train.push_back(rows[pos++]);
    ++c;
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

struct Split {
  Dataset train, val, test;
};

/// Partition into train/val/test datasets (val may be empty when its ratio is 0).
inline Split split(const Dataset& d, SplitRatios ratios, std::uint64_t seed) {
  const auto idx = split_indices(d, ratios, seed);
  Split out;
  out.train = d.subset(d.name() + ".train", idx.train);
  out.test = d.subset(d.name() + ".test", idx.test);
  if (!idx.val.empty()) out.val = d.subset(d.name() + ".val", idx.val);
  return out;
}

}  // namespace stackens::corpus
