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

// Config-driven experiment runner: staged, resumable pipeline from a labelled
// CSV to baseline and transformer report tables.

#include "stackens/classical.hpp"
#include "stackens/common.hpp"
#include "stackens/corpus.hpp"
#include "stackens/ensemble.hpp"
#include "stackens/features.hpp"
#include "stackens/metrics.hpp"
#include "stackens/neural.hpp"
#include "stackens/pretrain.hpp"
#include "stackens/textprep.hpp"
#include "stackens/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace stackens::runner {

namespace fs = std::filesystem;

// -------------------------------------------------------------------- config --

/// Every accepted key with its default, in canonical order.
inline const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"dataset.path", ""},
      {"dataset.name", ""},
      {"dataset.text_column", "text"},
      {"dataset.label_column", "label"},
      {"split.train", "0.8"},
      {"split.val", "0.1"},
      {"split.test", "0.1"},
      {"seeds", "1,2,3,4,5"},
      {"output.dir", "stackens-out"},
      {"preprocess.lowercase", "true"},
      {"preprocess.strip_urls", "true"},
      {"preprocess.strip_handles", "true"},
      {"preprocess.strip_numbers", "true"},
      {"preprocess.strip_symbols", "true"},
      {"preprocess.stopwords", "true"},
      {"tfidf.min_df", "1"},
      {"tfidf.norm", "l2"},
      {"tfidf.bigrams", "false"},
      {"baselines", "LSVM,LR,RF,GB,LGBM,PAC"},
      {"classical.epochs", "50"},
      {"classical.learning_rate", "0.1"},
      {"classical.regularization", "0.0001"},
      {"classical.tree_count", "100"},
      {"tokenizer.vocab_size", "2000"},
      {"tokenizer.max_len", "64"},
      {"tokenizer.mode", "lineage"},
      {"transformers", "bert,electra,distil,roberta"},
      {"transformer.scale", "desk"},
      {"transformer.epochs", "10"},
      {"transformer.learning_rate", "0.0003"},
      {"transformer.batch_size", "16"},
      {"transformer.dropout", "0.1"},
      {"pretrain.enabled", "true"},
      {"pretrain.epochs", "3"},
      {"pretrain.learning_rate", "0.001"},
      {"pretrain.mask_rate", "0.15"},
      {"distill.temperature", "2"},
      {"distill.soft_weight", "0.5"},
      {"distill.hard_weight", "0.5"},
      {"stack.enabled", "true"},
      {"stack.bases", ""},
      {"stack.folds", "5"},
      {"stack.leaky", "false"},
      {"meta.kind", "transformer-head"},
      {"meta.layers", "2"},
      {"meta.hidden", "32"},
      {"meta.heads", "4"},
      {"meta.epochs", "30"},
      {"meta.learning_rate", "0.003"},
      {"meta.batch_size", "16"},
  };
  return keys;
}

/// Keys that never change what a stage computes, so they are left out of
/// the artifact fingerprint.
inline bool artifact_neutral(std::string_view key) { return key == "seeds" || key == "output.dir"; }

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Closest valid key, comparing against whole keys and their last segment.
inline std::string nearest_key(std::string_view key) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& [k, v] : config_keys()) {
    const auto dot = k.rfind('.');
    std::size_t d = levenshtein(key, k);
    if (dot != std::string::npos) d = std::min(d, levenshtein(key, std::string_view(k).substr(dot + 1)));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto item = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? std::string(sep) : std::string()) + items[i];
  return out;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

/// Typed reads from the raw key map; each read rewrites its entry in
/// canonical form so the normalised text is independent of spelling.
class Reader {
 public:
  explicit Reader(std::map<std::string, std::string>& raw) : raw_(raw) {}

  std::string text(const std::string& key) { return raw_.at(key); }

  bool boolean(const std::string& key) {
    auto& v = raw_.at(key);
    if (v == "true" || v == "yes" || v == "1") return (v = "true", true);
    if (v == "false" || v == "no" || v == "0") return (v = "false", false);
    throw Error("config", key + ": expected true or false, got '" + v + "'");
  }

  double real(const std::string& key) {
    auto& v = raw_.at(key);
    double out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out))
      throw Error("config", key + ": expected a number, got '" + v + "'");
    v = format_double(out);
    return out;
  }

  long long integer(const std::string& key, long long min) {
    auto& v = raw_.at(key);
    long long out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw Error("config", key + ": expected an integer, got '" + v + "'");
    if (out < min) throw Error("config", key + ": must be at least " + std::to_string(min));
    v = std::to_string(out);
    return out;
  }

  template <typename F>
  auto list(const std::string& key, F&& convert) {
    auto& v = raw_.at(key);
    std::vector<decltype(convert(std::string()))> out;
    std::vector<std::string> canonical;
    for (const auto& item : split_list(v)) {
      try {
        out.push_back(convert(item));
      } catch (const Error& e) {
        throw Error("config", key + ": " + e.what());
      }
      canonical.push_back(item);
    }
    v = join(canonical, ",");
    return out;
  }

  template <typename F>
  auto choice(const std::string& key, F&& convert) {
    try {
      return convert(raw_.at(key));
    } catch (const Error& e) {
      throw Error("config", key + ": " + e.what());
    }
  }

 private:
  std::map<std::string, std::string>& raw_;
};

}  // namespace detail

enum class TokenizerChoice { lineage, char_level, byte_level };

struct ExperimentConfig {
  fs::path dataset_path;
  std::string dataset_name;
  std::string text_column = "text", label_column = "label";
  corpus::SplitRatios split;
  std::vector<std::uint64_t> seeds;
  fs::path output_dir;

  textprep::CleanConfig clean;
  bool remove_stopwords = true;
  features::TfidfOptions tfidf;

  std::vector<classical::Kind> baselines;
  int classical_epochs = 50;
  double classical_learning_rate = 0.1;
  double classical_regularization = 1e-4;
  int classical_tree_count = 100;

  std::size_t vocab_size = 2000;
  int max_len = 64;
  TokenizerChoice tokenizer = TokenizerChoice::lineage;

  std::vector<neural::Lineage> transformers;
  neural::Scale scale = neural::Scale::desk;
  neural::TrainOptions train;
  double dropout = 0.1;

  bool pretrain = true;
  int pretrain_epochs = 3;
  double pretrain_learning_rate = 1e-3;
  pretrain::MaskingSpec masking;
  pretrain::DistillSpec distill;

  bool stack = true;
  std::vector<std::string> stack_bases;  // model ids, in base order
  int folds = 5;
  bool leaky = false;
  ensemble::MetaSpec meta;

  // Canonical "key=value" lines for every key, defaults included.
  std::string normalized;

  std::string hash() const { return detail::hex64(fnv1a(normalized)); }

  /// Fingerprint of everything that shapes stage artifacts.
  std::string artifact_hash() const {
    std::istringstream in(normalized);
    std::string line, kept;
    while (std::getline(in, line))
      if (!artifact_neutral(line.substr(0, line.find('=')))) kept += line + '\n';
    return detail::hex64(fnv1a(kept));
  }
};

/// Model identifiers: classical kinds keep their table names (LSVM ...),
/// transformer lineages use their short names (bert ...).
inline std::string model_id(neural::Lineage l) {
  const std::string full = neural::to_string(l);
  return full.substr(0, full.find('-'));
}

inline bool is_transformer_id(const std::string& id) {
  for (auto l : {neural::Lineage::bert, neural::Lineage::electra, neural::Lineage::distil, neural::Lineage::roberta})
    if (id == model_id(l)) return true;
  return false;
}

struct Overrides {
  std::optional<fs::path> dataset;
  std::optional<fs::path> out;
  std::optional<std::string> seeds;  // comma list
};

/// Parses flat "section.key = value" text ('#' starts a comment) with
/// defaults for every absent key.
inline ExperimentConfig parse_config(std::string_view text, const Overrides& ov = {}, const fs::path& base_dir = {}) {
  std::map<std::string, std::string> raw;
  for (const auto& [k, v] : config_keys()) raw[k] = v;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    const auto body = detail::trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    require(eq != std::string::npos, "config", "line " + std::to_string(no) + ": expected 'key = value'");
    const auto key = detail::trim(std::string_view(body).substr(0, eq));
    if (!raw.contains(key))
      throw Error("config", "line " + std::to_string(no) + ": unknown key '" + key + "' (did you mean '" + nearest_key(key) + "'?)");
    require(seen.insert(key).second, "config", "line " + std::to_string(no) + ": duplicate key '" + key + "'");
    raw[key] = detail::trim(std::string_view(body).substr(eq + 1));
  }
  if (ov.dataset) raw["dataset.path"] = ov.dataset->string();
  if (ov.out) raw["output.dir"] = ov.out->string();
  if (ov.seeds) raw["seeds"] = *ov.seeds;

  ExperimentConfig c;
  detail::Reader r(raw);
  const auto path = r.text("dataset.path");
  require(!path.empty(), "config", "dataset.path: required");
  c.dataset_path = fs::path(path).is_absolute() || base_dir.empty() ? fs::path(path) : base_dir / path;
  require(fs::exists(c.dataset_path), "config", "dataset.path: missing file '" + c.dataset_path.string() + "'");
  c.dataset_name = r.text("dataset.name");
  if (c.dataset_name.empty()) c.dataset_name = c.dataset_path.stem().string();
  c.text_column = r.text("dataset.text_column");
  c.label_column = r.text("dataset.label_column");
  c.split = {r.real("split.train"), r.real("split.val"), r.real("split.test")};
  require(c.split.train > 0 && c.split.val >= 0 && c.split.test > 0 &&
              std::abs(c.split.train + c.split.val + c.split.test - 1.0) < 1e-9,
          "config", "split: ratios must be non-negative, with train and test positive, and sum to 1");
  c.seeds = r.list("seeds", [](const std::string& s) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc() && res.ptr == s.data() + s.size(), "config", "expected a seed integer, got '" + s + "'");
    return v;
  });
  require(!c.seeds.empty(), "config", "seeds: at least one seed required");
  c.output_dir = r.text("output.dir");
  require(!c.output_dir.empty(), "config", "output.dir: required");

  c.clean.lowercase = r.boolean("preprocess.lowercase");
  c.clean.strip_urls = r.boolean("preprocess.strip_urls");
  c.clean.strip_handles = r.boolean("preprocess.strip_handles");
  c.clean.strip_numbers = r.boolean("preprocess.strip_numbers");
  c.clean.strip_symbols = r.boolean("preprocess.strip_symbols");
  c.remove_stopwords = r.boolean("preprocess.stopwords");
  if (!c.remove_stopwords) c.clean.stopwords = {};
  c.tfidf.min_df = static_cast<std::size_t>(r.integer("tfidf.min_df", 1));
  c.tfidf.norm = r.choice("tfidf.norm", [](const std::string& s) { return features::norm_from_string(s); });
  c.tfidf.bigrams = r.boolean("tfidf.bigrams");

  c.baselines = r.list("baselines", [](const std::string& s) { return classical::kind_from_string(s); });
  c.classical_epochs = static_cast<int>(r.integer("classical.epochs", 1));
  c.classical_learning_rate = r.real("classical.learning_rate");
  c.classical_regularization = r.real("classical.regularization");
  c.classical_tree_count = static_cast<int>(r.integer("classical.tree_count", 1));

  c.vocab_size = static_cast<std::size_t>(r.integer("tokenizer.vocab_size", tokenizer::SpecialIds::count + 1));
  c.max_len = static_cast<int>(r.integer("tokenizer.max_len", 2));
  c.tokenizer = r.choice("tokenizer.mode", [](const std::string& s) {
    if (s == "lineage") return TokenizerChoice::lineage;
    return tokenizer::mode_from_string(s) == tokenizer::BpeMode::byte_level ? TokenizerChoice::byte_level
                                                                             : TokenizerChoice::char_level;
  });

  c.transformers = r.list("transformers", [](const std::string& s) { return neural::lineage_from_string(s); });
  c.scale = r.choice("transformer.scale", [](const std::string& s) {
    if (s == "desk") return neural::Scale::desk;
    if (s == "full") return neural::Scale::full;
    throw Error("config", "unknown scale '" + s + "' (expected desk or full)");
  });
  c.train.epochs = static_cast<int>(r.integer("transformer.epochs", 1));
  c.train.learning_rate = r.real("transformer.learning_rate");
  c.train.batch_size = static_cast<int>(r.integer("transformer.batch_size", 1));
  c.dropout = r.real("transformer.dropout");
  require(c.dropout >= 0 && c.dropout < 1, "config", "transformer.dropout: must lie in [0, 1)");

  c.pretrain = r.boolean("pretrain.enabled");
  c.pretrain_epochs = static_cast<int>(r.integer("pretrain.epochs", 1));
  c.pretrain_learning_rate = r.real("pretrain.learning_rate");
  c.masking.mask_rate = r.real("pretrain.mask_rate");
  try {
    c.masking.validate();
  } catch (const Error& e) {
    throw Error("config", std::string("pretrain.mask_rate: ") + e.what());
  }
  c.distill.temperature = r.real("distill.temperature");
  c.distill.soft_weight = r.real("distill.soft_weight");
  c.distill.hard_weight = r.real("distill.hard_weight");
  try {
    c.distill.validate();
  } catch (const Error& e) {
    throw Error("config", std::string("distill: ") + e.what());
  }

  std::vector<std::string> requested;
  for (auto k : c.baselines) requested.push_back(classical::to_string(k));
  for (auto l : c.transformers) requested.push_back(model_id(l));
  require(!requested.empty(), "config", "baselines, transformers: at least one model must be requested");
  require(std::set<std::string>(requested.begin(), requested.end()).size() == requested.size(), "config",
          "baselines, transformers: a model is listed twice");

  c.stack = r.boolean("stack.enabled");
  c.stack_bases = r.list("stack.bases", [&](const std::string& s) {
    const std::string id = is_transformer_id(s) ? s : s.find('-') != std::string::npos ? model_id(neural::lineage_from_string(s)) : s;
    require(std::find(requested.begin(), requested.end(), id) != requested.end(), "config",
            "'" + s + "' is not among the requested baselines or transformers");
    return id;
  });
  c.folds = static_cast<int>(r.integer("stack.folds", 2));
  c.leaky = r.boolean("stack.leaky");
  if (c.stack && c.stack_bases.empty())
    for (auto l : c.transformers) c.stack_bases.push_back(model_id(l));
  if (c.stack) require(c.stack_bases.size() >= 2, "config", "stack.bases: stacking needs at least 2 bases");

  c.meta.kind = r.choice("meta.kind", [](const std::string& s) { return ensemble::meta_kind_from_string(s); });
  c.meta.layers = static_cast<int>(r.integer("meta.layers", 1));
  c.meta.hidden = static_cast<int>(r.integer("meta.hidden", 1));
  c.meta.heads = static_cast<int>(r.integer("meta.heads", 1));
  require(c.meta.hidden % c.meta.heads == 0, "config", "meta.hidden: must be divisible by meta.heads");
  c.meta.train.epochs = static_cast<int>(r.integer("meta.epochs", 1));
  c.meta.train.learning_rate = r.real("meta.learning_rate");
  c.meta.train.batch_size = static_cast<int>(r.integer("meta.batch_size", 1));
  c.meta.logistic.epochs = c.meta.train.epochs;

  for (const auto& [k, v] : config_keys()) c.normalized += k + "=" + raw.at(k) + "\n";
  return c;
}

/// Reads and validates a config file; relative dataset paths resolve against
/// the file's directory.
inline ExperimentConfig validate_config(const fs::path& path, const Overrides& ov = {}) {
  require(fs::exists(path), "config", "missing config file '" + path.string() + "'");
  return parse_config(corpus::read_file(path, "config"), ov, path.parent_path());
}

// ------------------------------------------------------------------ pipeline --

/// One document in every representation a model may consume.
struct Doc {
  features::SparseVector tfidf;
  neural::Input chars, bytes;
};

inline tokenizer::BpeMode tokenizer_mode(const ExperimentConfig& c, neural::Lineage l) {
  switch (c.tokenizer) {
    case TokenizerChoice::char_level: return tokenizer::BpeMode::char_level;
    case TokenizerChoice::byte_level: return tokenizer::BpeMode::byte_level;
    case TokenizerChoice::lineage: break;
  }
  return neural::preset(l, c.scale).tokenizer_mode();
}

/// Split, fitted text models and encoded documents for one seed.
struct Prepared {
  corpus::LabelMap labels;
  corpus::SplitIndices split;
  LabelVector y_train, y_val, y_test;
  features::TfidfModel tfidf;
  std::map<tokenizer::BpeMode, tokenizer::BpeModel> tokenizers;
  std::vector<Doc> train, val, test;
};

struct ModelScore {
  std::string id, display;
  std::string family;  // baseline, transformer or stack
  bool ok = false;
  std::string error;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, loss = 0, mse = 0;
  std::string loss_kind;

  nlohmann::json to_json() const {
    nlohmann::json j{{"id", id}, {"display", display}, {"family", family}, {"ok", ok}};
    if (!ok) {
      j["error"] = error;
      return j;
    }
    j.update({{"accuracy", accuracy}, {"precision", precision}, {"recall", recall}, {"f1", f1}, {"loss", loss},
              {"loss_kind", loss_kind}, {"mse", mse}});
    return j;
  }
  static ModelScore from_json(const nlohmann::json& j) {
    ModelScore s;
    s.id = j.at("id");
    s.display = j.at("display");
    s.family = j.at("family");
    s.ok = j.at("ok");
    if (!s.ok) {
      s.error = j.at("error");
      return s;
    }
    s.accuracy = j.at("accuracy");
    s.precision = j.at("precision");
    s.recall = j.at("recall");
    s.f1 = j.at("f1");
    s.loss = j.at("loss");
    s.loss_kind = j.at("loss_kind");
    s.mse = j.at("mse");
    return s;
  }
};

inline std::string display_of(const std::string& id) {
  if (id == "stack") return "Our method";
  return is_transformer_id(id) ? neural::display_name(neural::lineage_from_string(id)) : id;
}

struct Options {
  std::ostream* log = nullptr;
};

namespace detail {

inline void log(const Options& o, const std::string& msg) {
  if (o.log) *o.log << "[stackens] " << msg << '\n' << std::flush;
}

inline void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  const auto tmp = fs::path(p.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    require(static_cast<bool>(f), "report", "cannot write '" + p.string() + "'");
    f << text;
    require(static_cast<bool>(f), "report", "cannot write '" + p.string() + "'");
  }
  fs::rename(tmp, p);
}

inline nlohmann::json read_json(const fs::path& p, const char* stage) {
  return nlohmann::json::parse(corpus::read_file(p, stage));
}

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_;
};

/// Runs `f`, re-tagging any error with the stage name.
template <typename F>
auto staged(const std::string& stage, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.stage() == stage) throw;
    throw Error(stage, e.what());
  } catch (const std::exception& e) {
    throw Error(stage, e.what());
  }
}

}  // namespace detail

/// Output layout: <out>/config.txt, <out>/seed_<s>/{prep,models,stack}/,
/// <out>/seed_<s>/results.json, report tables at <out>/.
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, Options opt = {}) : cfg_(std::move(cfg)), opt_(opt) {}

  const ExperimentConfig& config() const { return cfg_; }
  fs::path seed_dir(std::uint64_t seed) const { return cfg_.output_dir / ("seed_" + std::to_string(seed)); }

  /// Binds the output directory to this config; refuses a directory whose
  /// artifacts came from a different one.
  void claim_output() const {
    detail::staged("runner", [&] {
      const auto marker = cfg_.output_dir / "artifacts.hash";
      if (fs::exists(marker)) {
        const auto have = detail::trim(corpus::read_file(marker, "runner"));
        require(have == cfg_.artifact_hash(), "runner",
                "output directory '" + cfg_.output_dir.string() + "' holds artifacts from a different config (" + have +
                    "); choose another --out");
      } else {
        detail::write_text(marker, cfg_.artifact_hash() + "\n");
      }
      detail::write_text(cfg_.output_dir / "config.txt", cfg_.normalized);
      return 0;
    });
  }

  const corpus::Dataset& dataset() {
    if (!dataset_) {
      dataset_ = detail::staged("load", [&] {
        auto d = corpus::load_csv(cfg_.dataset_path, cfg_.text_column, cfg_.label_column);
        return corpus::Dataset(cfg_.dataset_name, std::vector<corpus::LabeledDocument>(d.documents()), d.dropped());
      });
      detail::staged("preprocess", [&] {
        for (const auto& doc : dataset_->documents()) {
          words_.push_back(textprep::preprocess_pipeline(doc, cfg_.clean));
          cleaned_.push_back(textprep::clean(doc.text, cfg_.clean));
        }
        return 0;
      });
    }
    return *dataset_;
  }

  // ---------------------------------------------------------------- prep --

  /// Split, TF-IDF and tokenizers for one seed, loaded when already on disk.
  Prepared prep(std::uint64_t seed) {
    const auto& data = dataset();
    const auto dir = seed_dir(seed) / "prep";
    Prepared p;
    detail::Timer t;
    const bool cached = fs::exists(dir / "split.json");
    detail::staged("split", [&] {
      if (cached) {
        const auto j = detail::read_json(dir / "split.json", "split");
        p.labels = corpus::LabelMap(j.at("labels").get<std::vector<std::string>>());
        p.split.train = j.at("train").get<std::vector<std::size_t>>();
        p.split.val = j.at("val").get<std::vector<std::size_t>>();
        p.split.test = j.at("test").get<std::vector<std::size_t>>();
      } else {
        p.labels = corpus::encode_labels(data).first;
        p.split = corpus::split_indices(data, cfg_.split, seed);
      }
      const auto ids = corpus::encode_with(p.labels, data);
      for (auto i : p.split.train) p.y_train.push_back(ids[i]);
      for (auto i : p.split.val) p.y_val.push_back(ids[i]);
      for (auto i : p.split.test) p.y_test.push_back(ids[i]);
      return 0;
    });
    detail::staged("features", [&] {
      if (cached) {
        p.tfidf = features::TfidfModel::deserialize(corpus::read_file(dir / "tfidf.txt", "features"));
      } else {
        std::vector<std::vector<std::string>> docs;
        for (auto i : p.split.train) docs.push_back(words_[i]);
        p.tfidf = features::fit_tfidf(docs, cfg_.tfidf);
      }
      return 0;
    });
    detail::staged("tokenizer", [&] {
      for (auto l : cfg_.transformers) {
        const auto mode = tokenizer_mode(cfg_, l);
        if (p.tokenizers.contains(mode)) continue;
        const auto file = dir / (std::string("tokenizer_") + tokenizer::to_string(mode) + ".txt");
        if (cached) {
          p.tokenizers.emplace(mode, tokenizer::BpeModel::load(file));
        } else {
          std::vector<std::string> texts;
          for (auto i : p.split.train) texts.push_back(cleaned_[i]);
          p.tokenizers.emplace(mode, tokenizer::train_bpe(texts, cfg_.vocab_size, mode, seed));
        }
      }
      return 0;
    });
    detail::staged("tokenizer", [&] {
      const auto encode = [&](std::span<const std::size_t> rows, std::vector<Doc>& out) {
        for (auto i : rows) {
          Doc d;
          d.tfidf = p.tfidf.transform(words_[i]);
          if (auto it = p.tokenizers.find(tokenizer::BpeMode::char_level); it != p.tokenizers.end())
            d.chars = neural::Input::from_sequence(it->second.encode(cleaned_[i], static_cast<std::size_t>(cfg_.max_len)));
          if (auto it = p.tokenizers.find(tokenizer::BpeMode::byte_level); it != p.tokenizers.end())
            d.bytes = neural::Input::from_sequence(it->second.encode(cleaned_[i], static_cast<std::size_t>(cfg_.max_len)));
          out.push_back(std::move(d));
        }
      };
      encode(p.split.train, p.train);
      encode(p.split.val, p.val);
      encode(p.split.test, p.test);
      return 0;
    });
    if (!cached) {
      nlohmann::json j{{"dataset", cfg_.dataset_name}, {"labels", p.labels.names()}, {"train", p.split.train},
                       {"val", p.split.val},           {"test", p.split.test}};
      detail::write_text(dir / "tfidf.txt", p.tfidf.serialize());
      for (const auto& [mode, model] : p.tokenizers)
        detail::write_text(dir / (std::string("tokenizer_") + tokenizer::to_string(mode) + ".txt"), model.serialize());
      detail::write_text(dir / "split.json", j.dump(2) + "\n");
      record_time(seed, "prep", t.seconds());
      detail::log(opt_, "seed " + std::to_string(seed) + ": prepared " + std::to_string(p.train.size()) + "/" +
                            std::to_string(p.val.size()) + "/" + std::to_string(p.test.size()) + " rows");
    }
    return p;
  }

  // ------------------------------------------------------------- learners --

  using LearnerPtr = std::shared_ptr<ensemble::BaseLearner<Doc>>;

  /// Untrained learner for a model id; pretrained encoders come from `p`.
  LearnerPtr make_learner(const std::string& id, const Prepared& p, std::uint64_t seed) {
    if (!is_transformer_id(id)) {
      const auto kind = classical::kind_from_string(id);
      auto spec = classical::TrainSpec::defaults(kind);
      spec.epochs = cfg_.classical_epochs;
      spec.learning_rate = cfg_.classical_learning_rate;
      spec.regularization = cfg_.classical_regularization;
      spec.tree_count = cfg_.classical_tree_count;
      return std::make_shared<ensemble::ClassicalLearner<Doc>>(kind, spec, static_cast<int>(p.tfidf.dimension()),
                                                               [](const Doc& d) -> const features::SparseVector& { return d.tfidf; });
    }
    const auto lineage = neural::lineage_from_string(id);
    const auto mode = tokenizer_mode(cfg_, lineage);
    ensemble::TransformerRecipe recipe;
    recipe.config = lineage_config(lineage, p);
    recipe.train = cfg_.train;
    if (lineage == neural::Lineage::distil) {
      recipe.distil = true;
      recipe.teacher_config = lineage_config(neural::Lineage::bert, p);
      recipe.teacher_config.vocab_size = recipe.config.vocab_size;
      recipe.distill_spec = cfg_.distill;
      if (cfg_.pretrain) recipe.initial = pretrained(neural::Lineage::bert, recipe.teacher_config, p, seed);
    } else if (cfg_.pretrain) {
      recipe.initial = pretrained(lineage, recipe.config, p, seed);
    }
    auto project = mode == tokenizer::BpeMode::byte_level ? +[](const Doc& d) -> const neural::Input& { return d.bytes; }
                                                          : +[](const Doc& d) -> const neural::Input& { return d.chars; };
    return std::make_shared<ensemble::TransformerLearner<Doc>>(id, std::move(recipe), project);
  }

  neural::TransformerConfig lineage_config(neural::Lineage l, const Prepared& p) const {
    auto c = neural::preset(l, cfg_.scale);
    c.vocab_size = static_cast<int>(p.tokenizers.at(tokenizer_mode(cfg_, l)).vocab_size());
    c.max_len = cfg_.max_len;
    c.dropout = cfg_.dropout;
    return c;
  }

  /// Lineage pretraining on the seed's training text: static MLM (bert),
  /// dynamic MLM (roberta), replaced-token detection (electra). Cached per seed.
  std::shared_ptr<const neural::TransformerModel> pretrained(neural::Lineage l, const neural::TransformerConfig& cfg,
                                                             const Prepared& p, std::uint64_t seed) {
    const auto file = seed_dir(seed) / "models" / (model_id(l) + ".pretrained.ckpt");
    const auto key = file.string();
    if (auto it = pretrained_.find(key); it != pretrained_.end()) return it->second;
    auto model = detail::staged("pretrain", [&] {
      if (fs::exists(file)) return neural::load_checkpoint(file);
      detail::Timer t;
      std::vector<neural::Input> corpus;
      const auto mode = tokenizer_mode(cfg_, l);
      for (const auto& d : p.train) corpus.push_back(mode == tokenizer::BpeMode::byte_level ? d.bytes : d.chars);
      pretrain::PretrainOptions po;
      po.epochs = cfg_.pretrain_epochs;
      po.learning_rate = cfg_.pretrain_learning_rate;
      po.batch_size = cfg_.train.batch_size;
      po.seed = mix_seed(seed, fnv1a(model_id(l)));
      auto spec = cfg_.masking;
      neural::TransformerModel out;
      if (l == neural::Lineage::electra) {
        const auto gen = pretrain::generator_config(cfg);
        out = pretrain::rtd_pretrain(neural::init_transformer(gen, po.seed), neural::init_transformer(cfg, po.seed), corpus, spec,
                                     po);
      } else {
        spec.dynamic = l == neural::Lineage::roberta;
        out = pretrain::mlm_pretrain(neural::init_transformer(cfg, po.seed), corpus, spec, po);
      }
      fs::create_directories(file.parent_path());
      neural::save_checkpoint(out, file);
      record_time(seed, "pretrain." + model_id(l), t.seconds());
      detail::log(opt_, "seed " + std::to_string(seed) + ": pretrained " + model_id(l));
      return out;
    });
    auto ptr = std::make_shared<const neural::TransformerModel>(std::move(model));
    pretrained_[key] = ptr;
    return ptr;
  }

  std::vector<std::string> model_ids() const {
    std::vector<std::string> ids;
    for (auto k : cfg_.baselines) ids.push_back(classical::to_string(k));
    for (auto l : cfg_.transformers) ids.push_back(model_id(l));
    return ids;
  }

  // ---------------------------------------------------------------- train --

  struct Trained {
    std::map<std::string, LearnerPtr> models;
    std::map<std::string, std::string> failures;
  };

  /// Fits every requested model on the seed's training split (or loads its
  /// checkpoint). A failing model is recorded and the others continue.
  Trained train(std::uint64_t seed, const Prepared& p) {
    Trained out;
    const auto dir = seed_dir(seed) / "models";
    for (const auto& id : model_ids()) {
      const auto ckpt = dir / (id + ".ckpt");
      try {
        auto learner = make_learner(id, p, seed);
        if (fs::exists(ckpt)) {
          learner->load(ckpt);
        } else {
          detail::Timer t;
          detail::staged("train", [&] {
            learner->fit(p.train, p.y_train, p.labels.size(), mix_seed(seed, fnv1a(id)));
            return 0;
          });
          fs::create_directories(dir);
          learner->save(ckpt);
          if (const auto* c = learner->curve()) detail::write_text(dir / (id + ".curve.csv"), c->to_csv());
          record_time(seed, "train." + id, t.seconds());
          detail::log(opt_, "seed " + std::to_string(seed) + ": trained " + id);
        }
        out.models[id] = learner;
      } catch (const Error& e) {
        out.failures[id] = std::string(e.what());
        detail::log(opt_, "seed " + std::to_string(seed) + ": " + id + " failed: " + e.what());
      }
    }
    return out;
  }

  // ---------------------------------------------------------------- stack --

  /// Out-of-fold stacking over the configured bases; deployment bases are the
  /// models from `train`. Loads the saved stack when present.
  std::optional<ensemble::StackedModel<Doc>> stack(std::uint64_t seed, const Prepared& p, const Trained& t,
                                                   std::string* failure = nullptr) {
    if (!cfg_.stack) return std::nullopt;
    const auto dir = seed_dir(seed) / "stack";
    try {
      return detail::staged("stack", [&] {
        std::vector<ensemble::LearnerPtr<Doc>> protos;
        ensemble::StackSpec<Doc> spec;
        for (const auto& id : cfg_.stack_bases) {
          const auto it = t.models.find(id);
          require(it != t.models.end(), "stack", "base '" + id + "' is unavailable: " +
                                                     (t.failures.contains(id) ? t.failures.at(id) : std::string("not trained")));
          protos.push_back(make_learner(id, p, seed));
          spec.prefit.push_back(it->second);
        }
        if (fs::exists(dir / "manifest.json")) return ensemble::load_stacked<Doc>(dir, protos);
        detail::Timer timer;
        spec.bases = protos;
        spec.meta = cfg_.meta;
        spec.folds = cfg_.folds;
        spec.seed = seed;
        spec.leaky = cfg_.leaky;
        auto [model, curve] = ensemble::stack_train<Doc>(spec, p.train, p.y_train, p.val, p.y_val, p.labels.size());
        // the audit inside stack_train throws on leakage; re-assert for the record
        require(cfg_.leaky || ensemble::leak_free(model.ledger), "stack", "leakage audit failed");
        const auto tmp = fs::path(dir.string() + ".partial");
        fs::remove_all(tmp);
        ensemble::save_stacked(model, tmp);
        detail::write_text(tmp / "meta.curve.csv", curve.to_csv());
        fs::remove_all(dir);
        fs::rename(tmp, dir);
        record_time(seed, "stack", timer.seconds());
        detail::log(opt_, "seed " + std::to_string(seed) + ": stacked " + std::to_string(spec.bases.size()) + " bases");
        return model;
      });
    } catch (const Error& e) {
      if (failure) *failure = e.what();
      detail::log(opt_, "seed " + std::to_string(seed) + ": stack failed: " + e.what());
      return std::nullopt;
    }
  }

  // ------------------------------------------------------------- evaluate --

  static ModelScore score(const std::string& id, const std::string& family, const ProbMatrix& p, std::span<const int> y) {
    ModelScore s;
    s.id = id;
    s.display = display_of(id);
    s.family = family;
    s.ok = true;
    const auto rep = metrics::score(p, y);
    s.accuracy = rep.accuracy;
    s.precision = rep.macro_precision;
    s.recall = rep.macro_recall;
    s.f1 = rep.macro_f1;
    const auto loss = metrics::classification_loss(p, y);
    s.loss = loss.value;
    s.loss_kind = metrics::to_string(loss.kind);
    s.mse = metrics::mse(p, y).value;
    return s;
  }

  /// Test-split scores for every model and the stack; writes results.json.
  std::vector<ModelScore> evaluate(std::uint64_t seed, const Prepared& p, const Trained& t,
                                   const std::optional<ensemble::StackedModel<Doc>>& stacked, const std::string& stack_failure) {
    std::vector<ModelScore> out;
    detail::Timer timer;
    for (const auto& id : model_ids()) {
      const std::string family = is_transformer_id(id) ? "transformer" : "baseline";
      if (const auto it = t.models.find(id); it != t.models.end()) {
        out.push_back(detail::staged("evaluate", [&] { return score(id, family, it->second->predict_proba(p.test), p.y_test); }));
      } else {
        ModelScore s;
        s.id = id;
        s.display = display_of(id);
        s.family = family;
        s.error = t.failures.contains(id) ? t.failures.at(id) : "not trained";
        out.push_back(s);
      }
    }
    if (cfg_.stack) {
      if (stacked) {
        out.push_back(detail::staged("evaluate", [&] { return score("stack", "stack", ensemble::stack_predict<Doc>(*stacked, p.test), p.y_test); }));
      } else {
        ModelScore s;
        s.id = "stack";
        s.display = display_of("stack");
        s.family = "stack";
        s.error = stack_failure.empty() ? "not trained" : stack_failure;
        out.push_back(s);
      }
    }
    record_time(seed, "evaluate", timer.seconds());
    nlohmann::json j{{"seed", seed}, {"dataset", cfg_.dataset_name}, {"classes", p.labels.names()}};
    for (const auto& s : out) j["models"].push_back(s.to_json());
    j["seconds"] = timings(seed);
    detail::write_text(seed_dir(seed) / "results.json", j.dump(2) + "\n");
    return out;
  }

  // ------------------------------------------------------------- per seed --

  enum class Stage { prep, train, stack, evaluate };

  /// Runs stages up to and including `last` for one seed, reusing artifacts.
  void run_seed(std::uint64_t seed, Stage last) {
    claim_output();
    const auto p = prep(seed);
    if (last == Stage::prep) return;
    const auto t = train(seed, p);
    if (last == Stage::train) return;
    std::string failure;
    const auto s = stack(seed, p, t, &failure);
    if (last == Stage::stack) return;
    evaluate(seed, p, t, s, failure);
  }

  void run_all(Stage last) {
    for (auto seed : cfg_.seeds) run_seed(seed, last);
  }

  /// Wall-clock seconds per stage for one seed, accumulated across processes.
  nlohmann::json timings(std::uint64_t seed) const {
    const auto file = seed_dir(seed) / "timings.json";
    return fs::exists(file) ? detail::read_json(file, "runner") : nlohmann::json::object();
  }

 private:
  void record_time(std::uint64_t seed, const std::string& key, double seconds) {
    auto j = timings(seed);
    j[key] = seconds;
    detail::write_text(seed_dir(seed) / "timings.json", j.dump(2) + "\n");
  }

  ExperimentConfig cfg_;
  Options opt_;
  std::optional<corpus::Dataset> dataset_;
  std::vector<std::vector<std::string>> words_;
  std::vector<std::string> cleaned_;
  std::map<std::string, std::shared_ptr<const neural::TransformerModel>> pretrained_;
};

// ------------------------------------------------------------------- report --

struct ModelRow {
  std::string id, display, family;
  bool ok = true;
  std::vector<std::string> errors;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, loss = 0, mse = 0;
  std::string loss_kind;
  std::vector<ModelScore> per_seed;
};

struct ReportBundle {
  std::string dataset;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> classes;
  bool leaky = false;
  bool complete = true;
  std::vector<ModelRow> baselines, transformers;  // transformers end with the stack row
  std::map<std::string, neural::LossCurve> curves;  // model id (or "meta") -> seed-mean curve
  nlohmann::json seconds;                           // per seed, per stage
};

namespace detail {

/// Epoch-wise mean over seeds, truncated to the shortest curve.
inline neural::LossCurve mean_curve(const std::vector<neural::LossCurve>& curves) {
  neural::LossCurve out;
  if (curves.empty()) return out;
  std::size_t n = curves.front().size();
  for (const auto& c : curves) n = std::min(n, c.size());
  for (std::size_t e = 0; e < n; ++e) {
    neural::LossPoint p{curves.front().points[e].epoch, 0.0, 0.0};
    for (const auto& c : curves) {
      p.train_loss += c.points[e].train_loss / static_cast<double>(curves.size());
      p.val_loss += c.points[e].val_loss / static_cast<double>(curves.size());
    }
    out.points.push_back(p);
  }
  return out;
}

}  // namespace detail

/// Aggregates the per-seed results.json files into a bundle (means over seeds).
inline ReportBundle collect(const ExperimentConfig& cfg) {
  return detail::staged("report", [&] {
    ReportBundle b;
    b.dataset = cfg.dataset_name;
    b.config_hash = cfg.hash();
    b.seeds = cfg.seeds;
    b.leaky = cfg.leaky;
    std::map<std::string, ModelRow> rows;
    std::vector<std::string> order;
    std::map<std::string, std::vector<neural::LossCurve>> curves;
    for (auto seed : cfg.seeds) {
      const auto dir = cfg.output_dir / ("seed_" + std::to_string(seed));
      const auto file = dir / "results.json";
      require(fs::exists(file), "report", "missing results for seed " + std::to_string(seed) + "; run evaluate first");
      const auto j = detail::read_json(file, "report");
      b.classes = j.at("classes").get<std::vector<std::string>>();
      b.seconds[std::to_string(seed)] = j.at("seconds");
      for (const auto& m : j.at("models")) {
        const auto s = ModelScore::from_json(m);
        if (!rows.contains(s.id)) {
          order.push_back(s.id);
          ModelRow r;
          r.id = s.id;
          r.display = s.display;
          r.family = s.family;
          rows[s.id] = r;
        }
        rows[s.id].per_seed.push_back(s);
        const auto curve = s.id == "stack" ? dir / "stack" / "meta.curve.csv" : dir / "models" / (s.id + ".curve.csv");
        if (fs::exists(curve)) curves[s.id == "stack" ? "meta" : s.id].push_back(neural::LossCurve::from_csv(corpus::read_file(curve, "report")));
      }
    }
    for (const auto& id : order) {
      auto& r = rows[id];
      const double n = static_cast<double>(r.per_seed.size());
      for (const auto& s : r.per_seed) {
        if (!s.ok) {
          r.ok = false;
          r.errors.push_back(s.error);
          continue;
        }
        r.accuracy += s.accuracy / n;
        r.precision += s.precision / n;
        r.recall += s.recall / n;
        r.f1 += s.f1 / n;
        r.loss += s.loss / n;
        r.mse += s.mse / n;
        r.loss_kind = s.loss_kind;
      }
      b.complete = b.complete && r.ok;
      (r.family == "baseline" ? b.baselines : b.transformers).push_back(r);
    }
    for (const auto& [id, cs] : curves) b.curves[id] = detail::mean_curve(cs);
    return b;
  });
}

namespace detail {

inline std::string md_cell(const ModelRow& r, double v) {
  if (!r.ok) return "failed";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string csv_cell(const ModelRow& r, double v) { return r.ok ? format_double(v) : std::string(); }

inline std::string seed_list(const std::vector<std::uint64_t>& seeds) {
  std::vector<std::string> s;
  for (auto v : seeds) s.push_back(std::to_string(v));
  return join(s, ", ");
}

inline std::string row_name(const ReportBundle& b, const ModelRow& r) {
  return r.family == "stack" && b.leaky ? r.display + " (leaky)" : r.display;
}

/// Markdown and CSV for one table; `last` names the final metric column.
inline std::pair<std::string, std::string> table(const ReportBundle& b, const std::vector<ModelRow>& rows, const std::string& title,
                                                 const std::string& last, bool use_f1) {
  std::ostringstream md, csv;
  md << "# " << title << " on " << b.dataset << "\n\n";
  md << "Test split, mean over seeds " << seed_list(b.seeds) << ". Precision, recall" << (use_f1 ? " and F1" : "")
     << " are macro averages";
  if (!use_f1) md << "; Loss is " << (b.classes.size() == 2 ? "binary" : "categorical") << " cross-entropy";
  md << ".\n\n";
  md << "| Model | Accuracy | Precision | Recall | " << last << " |\n|---|---|---|---|---|\n";
  csv << "Dataset,Model,Accuracy,Precision,Recall," << last << "\n";
  for (const auto& r : rows) {
    const double v = use_f1 ? r.f1 : r.loss;
    md << "| " << row_name(b, r) << " | " << md_cell(r, r.accuracy) << " | " << md_cell(r, r.precision) << " | "
       << md_cell(r, r.recall) << " | " << md_cell(r, v) << " |\n";
    csv << corpus::csv_escape(b.dataset) << ',' << corpus::csv_escape(row_name(b, r)) << ',' << csv_cell(r, r.accuracy) << ','
        << csv_cell(r, r.precision) << ',' << csv_cell(r, r.recall) << ',' << csv_cell(r, v) << "\n";
  }
  if (!b.complete) md << "\nSome models failed; see report.json for the errors.\n";
  return {md.str(), csv.str()};
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace detail

/// Writes baselines.{md,csv}, transformers.{md,csv}, loss_curve_<id>.csv and
/// report.json (the only file carrying a timestamp) into `out_dir`.
inline void emit_report(const ReportBundle& b, const fs::path& out_dir) {
  detail::staged("report", [&] {
    fs::create_directories(out_dir);
    if (!b.baselines.empty()) {
      const auto [md, csv] = detail::table(b, b.baselines, "Baselines", "F1-Score", true);
      detail::write_text(out_dir / "baselines.md", md);
      detail::write_text(out_dir / "baselines.csv", csv);
    }
    if (!b.transformers.empty()) {
      const auto [md, csv] = detail::table(b, b.transformers, "Transformers", "Loss", false);
      detail::write_text(out_dir / "transformers.md", md);
      detail::write_text(out_dir / "transformers.csv", csv);
    }
    for (const auto& [id, c] : b.curves) detail::write_text(out_dir / ("loss_curve_" + id + ".csv"), c.to_csv());

    nlohmann::json j;
    j["dataset"] = b.dataset;
    j["config_hash"] = b.config_hash;
    j["seeds"] = b.seeds;
    j["classes"] = b.classes;
    j["complete"] = b.complete;
    j["stack_mode"] = b.leaky ? "leaky (bases predict rows they trained on)" : "out-of-fold";
    j["averaging"] = "macro";
    j["loss"] = b.classes.size() == 2 ? "binary cross-entropy on P(class 1)" : "categorical cross-entropy";
    j["mse"] = "mean over rows of the squared distance between predicted probabilities and the one-hot label";
    j["zero_division"] = "0/0 reported as 0";
    for (const auto* rows : {&b.baselines, &b.transformers})
      for (const auto& r : *rows) {
        nlohmann::json m{{"id", r.id}, {"display", r.display}, {"family", r.family}, {"ok", r.ok}};
        if (r.ok) {
          m["mean"] = {{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
                       {"loss", r.loss},         {"loss_kind", r.loss_kind}, {"mse", r.mse}};
        } else {
          m["errors"] = r.errors;
        }
        for (const auto& s : r.per_seed) m["per_seed"].push_back(s.to_json());
        j["models"].push_back(m);
      }
    for (const auto& [id, c] : b.curves) j["curves"][id] = "loss_curve_" + id + ".csv";
    j["seconds"] = b.seconds;
    j["generated_at"] = detail::utc_now();
    detail::write_text(out_dir / "report.json", j.dump(2) + "\n");
    return 0;
  });
}

/// Full pipeline: every stage for every seed, then the report.
inline ReportBundle run_experiment(const ExperimentConfig& cfg, Options opt = {}) {
  Experiment ex(cfg, opt);
  ex.run_all(Experiment::Stage::evaluate);
  auto b = collect(cfg);
  emit_report(b, cfg.output_dir);
  return b;
}

}  // namespace stackens::runner
