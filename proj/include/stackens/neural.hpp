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
#include "stackens/tokenizer.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace stackens::neural {

enum class Lineage { bert, electra, distil, roberta };
enum class Scale { full, desk };
enum class InputKind { tokens, dense };

inline const char* to_string(Lineage l) {
  switch (l) {
    case Lineage::bert: return "bert-like";
    case Lineage::electra: return "electra-like";
    case Lineage::distil: return "distil-like";
    case Lineage::roberta: return "roberta-like";
  }
  return "?";
}

inline Lineage lineage_from_string(std::string_view s) {
  for (Lineage l : {Lineage::bert, Lineage::electra, Lineage::distil, Lineage::roberta}) {
    const std::string_view full = to_string(l);
    if (s == full || s == full.substr(0, full.find('-'))) return l;
  }
  throw Error("neural", "unknown lineage '" + std::string(s) + "' (expected bert, electra, distil or roberta)");
}

/// Display name used in report tables.
inline const char* display_name(Lineage l) {
  switch (l) {
    case Lineage::bert: return "BERT";
    case Lineage::electra: return "ELECTRA";
    case Lineage::distil: return "DistilBERT";
    case Lineage::roberta: return "RoBERTa";
  }
  return "?";
}

struct TransformerConfig {
  int layers = 4;
  int hidden = 64;
  int heads = 4;
  int ffn_multiplier = 4;
  int max_len = 64;
  int vocab_size = 2000;
  int classes = 2;
  Lineage lineage = Lineage::bert;
  double dropout = 0.1;
  // Dense input replaces the token table with a linear projection of
  // `input_dim`-wide rows (used by the stacking meta classifier).
  InputKind input = InputKind::tokens;
  int input_dim = 0;

  int head_dim() const { return hidden / heads; }
  int ffn_dim() const { return hidden * ffn_multiplier; }

  /// Byte-level BPE for the roberta lineage, character-level otherwise.
  tokenizer::BpeMode tokenizer_mode() const {
    return lineage == Lineage::roberta ? tokenizer::BpeMode::byte_level : tokenizer::BpeMode::char_level;
  }

  void validate() const {
    require(layers >= 1, "neural", "config needs at least one layer");
    require(hidden >= 1 && heads >= 1 && hidden % heads == 0, "neural", "hidden size must be divisible by heads");
    require(ffn_multiplier >= 1 && max_len >= 1 && classes >= 2, "neural", "invalid transformer config");
    require(dropout >= 0 && dropout < 1, "neural", "dropout must lie in [0, 1)");
    if (input == InputKind::tokens)
      require(vocab_size > tokenizer::SpecialIds::count, "neural", "vocabulary too small");
    else
      require(input_dim >= 1, "neural", "dense input needs input_dim >= 1");
  }

  bool operator==(const TransformerConfig&) const = default;
};

/// Layer/width/head presets per lineage. Full scale carries base-size
/// depth, width and head counts; desk scale shrinks them for CPU training
/// while keeping distil-like at half the bert-like depth.
inline TransformerConfig preset(Lineage lineage, Scale scale) {
  TransformerConfig c;
  c.lineage = lineage;
  if (scale == Scale::full) {
    c.layers = lineage == Lineage::distil ? 6 : 12;
    c.hidden = 768;
    c.heads = 12;
  } else {
    c.layers = lineage == Lineage::distil ? 2 : 4;
    c.hidden = 64;
    c.heads = 4;
  }
  return c;
}

struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0, cols = 0;

  std::size_t size() const { return rows * cols; }
};

using MatMap = Eigen::Map<Matrix>;
using ConstMatMap = Eigen::Map<const Matrix>;

/// Encoder weights in one flat buffer, addressed through named groups.
/// Gradients and optimiser moments share the same layout.
class TransformerModel {
 public:
  struct LayerSlots {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  TransformerModel() = default;
  explicit TransformerModel(const TransformerConfig& cfg) : config_(cfg) {
    cfg.validate();
    const auto h = static_cast<std::size_t>(cfg.hidden);
    const auto f = static_cast<std::size_t>(cfg.ffn_dim());
    if (cfg.input == InputKind::tokens) {
      embed_ = add("embed.tokens", static_cast<std::size_t>(cfg.vocab_size), h);
    } else {
      embed_ = add("embed.projection", static_cast<std::size_t>(cfg.input_dim), h);
      embed_bias_ = add("embed.projection_bias", 1, h);
    }
    pos_ = add("embed.positions", static_cast<std::size_t>(cfg.max_len), h);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerSlots s{};
      s.ln1_g = add(p + "ln1.scale", 1, h);
      s.ln1_b = add(p + "ln1.shift", 1, h);
      s.wq = add(p + "attn.wq", h, h);
      s.bq = add(p + "attn.bq", 1, h);
      s.wk = add(p + "attn.wk", h, h);
      s.bk = add(p + "attn.bk", 1, h);
      s.wv = add(p + "attn.wv", h, h);
      s.bv = add(p + "attn.bv", 1, h);
      s.wo = add(p + "attn.wo", h, h);
      s.bo = add(p + "attn.bo", 1, h);
      s.ln2_g = add(p + "ln2.scale", 1, h);
      s.ln2_b = add(p + "ln2.shift", 1, h);
      s.w1 = add(p + "ffn.w1", h, f);
      s.b1 = add(p + "ffn.b1", 1, f);
      s.w2 = add(p + "ffn.w2", f, h);
      s.b2 = add(p + "ffn.b2", 1, h);
      layers_.push_back(s);
    }
    lnf_g_ = add("final_ln.scale", 1, h);
    lnf_b_ = add("final_ln.shift", 1, h);
    head_w_ = add("head.weight", h, static_cast<std::size_t>(cfg.classes));
    head_b_ = add("head.bias", 1, static_cast<std::size_t>(cfg.classes));
    params_.assign(total_, 0.0);
  }

  const TransformerConfig& config() const { return config_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<LayerSlots>& layer_slots() const { return layers_; }

  int embed_slot() const { return embed_; }
  int embed_bias_slot() const { return embed_bias_; }
  int pos_slot() const { return pos_; }
  int final_ln_scale_slot() const { return lnf_g_; }
  int final_ln_shift_slot() const { return lnf_b_; }
  int head_weight_slot() const { return head_w_; }
  int head_bias_slot() const { return head_b_; }

  int slot(const std::string& name) const {
    for (std::size_t i = 0; i < groups_.size(); ++i)
      if (groups_[i].name == name) return static_cast<int>(i);
    throw Error("neural", "no parameter group '" + name + "'");
  }

  MatMap view(std::vector<double>& buffer, int slot) const {
    const auto& g = groups_[static_cast<std::size_t>(slot)];
    return MatMap(buffer.data() + g.offset, static_cast<Eigen::Index>(g.rows), static_cast<Eigen::Index>(g.cols));
  }
  ConstMatMap view(const std::vector<double>& buffer, int slot) const {
    const auto& g = groups_[static_cast<std::size_t>(slot)];
    return ConstMatMap(buffer.data() + g.offset, static_cast<Eigen::Index>(g.rows), static_cast<Eigen::Index>(g.cols));
  }
  MatMap param(int slot) { return view(params_, slot); }
  ConstMatMap param(int slot) const { return view(params_, slot); }

  /// "pretrained" or "finetuned"; carried into checkpoints.
  std::string phase = "finetuned";

  bool operator==(const TransformerModel& o) const { return config_ == o.config_ && params_ == o.params_; }

 private:
  int add(std::string name, std::size_t rows, std::size_t cols) {
    groups_.push_back({std::move(name), total_, rows, cols});
    total_ += rows * cols;
    return static_cast<int>(groups_.size() - 1);
  }

  TransformerConfig config_;
  std::vector<ParamGroup> groups_;
  std::vector<double> params_;
  std::size_t total_ = 0;
  std::vector<LayerSlots> layers_;
  int embed_ = -1, embed_bias_ = -1, pos_ = -1, lnf_g_ = -1, lnf_b_ = -1, head_w_ = -1, head_b_ = -1;
};

/// Closed-form parameter count for a config.
inline std::size_t parameter_count(const TransformerConfig& c) {
  const std::size_t h = static_cast<std::size_t>(c.hidden), f = static_cast<std::size_t>(c.ffn_dim());
  const std::size_t embed = c.input == InputKind::tokens ? static_cast<std::size_t>(c.vocab_size) * h
                                                         : static_cast<std::size_t>(c.input_dim) * h + h;
  const std::size_t per_layer = 4 * h * h + 4 * h + 2 * h * f + f + h + 4 * h;
  return embed + static_cast<std::size_t>(c.max_len) * h + static_cast<std::size_t>(c.layers) * per_layer + 2 * h +
         h * static_cast<std::size_t>(c.classes) + static_cast<std::size_t>(c.classes);
}

/// N(0, 0.02^2) weights, layer-norm scale 1 and shift 0, zero biases.
inline TransformerModel init_transformer(const TransformerConfig& cfg, std::uint64_t seed) {
  TransformerModel m(cfg);
  Rng rng = make_rng(seed, 0x696E6974ULL);
  for (std::size_t s = 0; s < m.groups().size(); ++s) {
    const auto& g = m.groups()[s];
    const bool is_scale = g.name.ends_with(".scale");
    const bool is_bias = g.rows == 1 && !is_scale;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& p = m.params()[g.offset + i];
      if (is_scale)
        p = 1.0;
      else if (is_bias)
        p = 0.0;
      else
        p = 0.02 * normal01(rng);
    }
  }
  return m;
}

/// One encoder input: the valid (unpadded) token ids, or dense rows.
struct Input {
  std::vector<int> ids;
  Matrix dense;

  int length() const { return dense.size() ? static_cast<int>(dense.rows()) : static_cast<int>(ids.size()); }

  /// Keeps the valid prefix. Pad positions are excluded from the computation
  /// entirely, which is equivalent to giving pad keys -inf attention scores:
  /// no valid position ever reads a pad state.
  static Input from_sequence(const tokenizer::TokenSequence& s) {
    require(s.ids.size() == s.attention_mask.size(), "neural", "ids and mask lengths differ");
    const std::size_t n = s.valid_length();
    for (std::size_t i = n; i < s.attention_mask.size(); ++i)
      require(s.attention_mask[i] == 0, "neural", "attention mask must be a prefix of ones");
    require(n >= 1, "neural", "sequence has no valid positions");
    Input in;
    in.ids.assign(s.ids.begin(), s.ids.begin() + static_cast<std::ptrdiff_t>(n));
    return in;
  }
  static Input from_dense(Matrix rows) {
    Input in;
    in.dense = std::move(rows);
    return in;
  }
};

inline std::vector<Input> to_inputs(std::span<const tokenizer::TokenSequence> seqs, const TransformerConfig& cfg) {
  std::vector<Input> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    require(static_cast<int>(s.length()) == cfg.max_len, "neural",
            "sequence length " + std::to_string(s.length()) + " does not match configured length " + std::to_string(cfg.max_len));
    out.push_back(Input::from_sequence(s));
  }
  return out;
}

// ---------------------------------------------------------------- forward --

namespace detail {

inline constexpr double kLnEps = 1e-5;

struct LnCache {
  Matrix xhat;
  Vector rstd;
};

inline Matrix layer_norm(const Matrix& x, ConstMatMap g, ConstMatMap b, LnCache& cache) {
  const Eigen::Index t = x.rows(), h = x.cols();
  cache.xhat.resize(t, h);
  cache.rstd.resize(t);
  Matrix y(t, h);
  for (Eigen::Index i = 0; i < t; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double r = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd(i) = r;
    cache.xhat.row(i) = (x.row(i).array() - mu) * r;
    y.row(i) = cache.xhat.row(i).cwiseProduct(g.row(0)) + b.row(0);
  }
  return y;
}

// Accumulates scale/shift gradients, returns dL/dx.
inline Matrix layer_norm_backward(const Matrix& dy, const LnCache& cache, ConstMatMap g, MatMap dg, MatMap db) {
  const Eigen::Index t = dy.rows();
  dg.row(0) += (dy.cwiseProduct(cache.xhat)).colwise().sum();
  db.row(0) += dy.colwise().sum();
  Matrix dx(t, dy.cols());
  for (Eigen::Index i = 0; i < t; ++i) {
    const RowVector dxhat = dy.row(i).cwiseProduct(g.row(0));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = cache.rstd(i) * (dxhat.array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

inline double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u * M_SQRT1_2)); }
inline double gelu_grad(double u) {
  const double cdf = 0.5 * (1.0 + std::erf(u * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
  return cdf + u * pdf;
}

inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix m(rows, cols);
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  return m;
}

}  // namespace detail

/// Training-mode switch for a forward pass. Dropout is active only when
/// `rng` is set and the configured rate is positive.
struct PassMode {
  Rng* rng = nullptr;
};

struct LayerCache {
  Matrix x_in;
  detail::LnCache ln1;
  Matrix a, q, k, v;
  std::vector<Matrix> attn;  // per head, rows are softmax distributions
  Matrix ctx;
  Matrix drop1;
  Matrix x_mid;
  detail::LnCache ln2;
  Matrix b, u, f;
  Matrix drop2;
};

struct EncoderCache {
  const Input* input = nullptr;
  Matrix drop0;
  std::vector<LayerCache> layers;
  Matrix x_final;
  detail::LnCache lnf;
  Matrix z;  // T x hidden, final normalised states
};

/// Pre-norm encoder stack: embeddings + learned positions, then per layer
///   x += Drop(MHA(LN1(x)));  x += Drop(W2 GELU(W1 LN2(x)));
/// and a final layer norm.
inline EncoderCache encode(const TransformerModel& m, const Input& in, PassMode mode = {}) {
  const auto& cfg = m.config();
  const int t = in.length();
  require(t >= 1 && t <= cfg.max_len, "neural", "input length " + std::to_string(t) + " outside [1, max_len]");
  const bool train = mode.rng != nullptr && cfg.dropout > 0;
  EncoderCache c;
  c.input = &in;
  const auto pos = m.param(m.pos_slot());
  Matrix x(t, cfg.hidden);
  if (cfg.input == InputKind::tokens) {
    require(in.dense.size() == 0, "neural", "token model given dense input");
    const auto emb = m.param(m.embed_slot());
    for (int i = 0; i < t; ++i) {
      const int id = in.ids[static_cast<std::size_t>(i)];
      require(id >= 0 && id < cfg.vocab_size, "neural", "token id " + std::to_string(id) + " out of vocabulary");
      x.row(i) = emb.row(id) + pos.row(i);
    }
  } else {
    require(in.dense.cols() == cfg.input_dim, "neural", "dense input width mismatch");
    x = in.dense * m.param(m.embed_slot());
    x.rowwise() += m.param(m.embed_bias_slot()).row(0);
    x += pos.topRows(t);
  }
  if (train) {
    c.drop0 = detail::dropout_mask(t, cfg.hidden, cfg.dropout, *mode.rng);
    x = x.cwiseProduct(c.drop0);
  }
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& s : m.layer_slots()) {
    LayerCache lc;
    lc.x_in = x;
    lc.a = detail::layer_norm(x, m.param(s.ln1_g), m.param(s.ln1_b), lc.ln1);
    lc.q = lc.a * m.param(s.wq);
    lc.q.rowwise() += m.param(s.bq).row(0);
    lc.k = lc.a * m.param(s.wk);
    lc.k.rowwise() += m.param(s.bk).row(0);
    lc.v = lc.a * m.param(s.wv);
    lc.v.rowwise() += m.param(s.bv).row(0);
    lc.ctx.resize(t, cfg.hidden);
    for (int h = 0; h < cfg.heads; ++h) {
      Matrix sc = scale * lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose();
      softmax_rows(sc);
      lc.ctx.middleCols(h * dh, dh) = sc * lc.v.middleCols(h * dh, dh);
      lc.attn.push_back(std::move(sc));
    }
    Matrix o = lc.ctx * m.param(s.wo);
    o.rowwise() += m.param(s.bo).row(0);
    if (train) {
      lc.drop1 = detail::dropout_mask(t, cfg.hidden, cfg.dropout, *mode.rng);
      o = o.cwiseProduct(lc.drop1);
    }
    lc.x_mid = x + o;
    lc.b = detail::layer_norm(lc.x_mid, m.param(s.ln2_g), m.param(s.ln2_b), lc.ln2);
    lc.u = lc.b * m.param(s.w1);
    lc.u.rowwise() += m.param(s.b1).row(0);
    lc.f = lc.u.unaryExpr([](double v) { return detail::gelu(v); });
    Matrix g = lc.f * m.param(s.w2);
    g.rowwise() += m.param(s.b2).row(0);
    if (train) {
      lc.drop2 = detail::dropout_mask(t, cfg.hidden, cfg.dropout, *mode.rng);
      g = g.cwiseProduct(lc.drop2);
    }
    x = lc.x_mid + g;
    c.layers.push_back(std::move(lc));
  }
  c.x_final = x;
  c.z = detail::layer_norm(x, m.param(m.final_ln_scale_slot()), m.param(m.final_ln_shift_slot()), c.lnf);
  return c;
}

/// Back-propagates dL/dz (T x hidden) through the encoder, accumulating into
/// `grad` (same layout as the parameters).
inline void backward_encoder(const TransformerModel& m, const EncoderCache& c, const Matrix& dz, std::vector<double>& grad) {
  const auto& cfg = m.config();
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dx = detail::layer_norm_backward(dz, c.lnf, m.param(m.final_ln_scale_slot()), m.view(grad, m.final_ln_scale_slot()),
                                          m.view(grad, m.final_ln_shift_slot()));
  const auto& slots = m.layer_slots();
  for (std::size_t li = slots.size(); li-- > 0;) {
    const auto& s = slots[li];
    const LayerCache& lc = c.layers[li];
    // feed-forward branch
    const Matrix dg = lc.drop2.size() ? Matrix(dx.cwiseProduct(lc.drop2)) : dx;
    m.view(grad, s.w2).noalias() += lc.f.transpose() * dg;
    m.view(grad, s.b2).row(0) += dg.colwise().sum();
    Matrix du = dg * m.param(s.w2).transpose();
    for (Eigen::Index i = 0; i < du.size(); ++i) du.data()[i] *= detail::gelu_grad(lc.u.data()[i]);
    m.view(grad, s.w1).noalias() += lc.b.transpose() * du;
    m.view(grad, s.b1).row(0) += du.colwise().sum();
    const Matrix dbn = du * m.param(s.w1).transpose();
    Matrix dmid = dx + detail::layer_norm_backward(dbn, lc.ln2, m.param(s.ln2_g), m.view(grad, s.ln2_g), m.view(grad, s.ln2_b));
    // attention branch
    const Matrix d_o = lc.drop1.size() ? Matrix(dmid.cwiseProduct(lc.drop1)) : dmid;
    m.view(grad, s.wo).noalias() += lc.ctx.transpose() * d_o;
    m.view(grad, s.bo).row(0) += d_o.colwise().sum();
    const Matrix dctx = d_o * m.param(s.wo).transpose();
    Matrix dq(lc.q.rows(), lc.q.cols()), dk(lc.k.rows(), lc.k.cols()), dv(lc.v.rows(), lc.v.cols());
    for (int h = 0; h < cfg.heads; ++h) {
      const Matrix& a = lc.attn[static_cast<std::size_t>(h)];
      const auto dctx_h = dctx.middleCols(h * dh, dh);
      const Matrix da = dctx_h * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * dctx_h;
      Matrix ds = a.cwiseProduct(da);
      const Vector row_dot = ds.rowwise().sum();
      ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
      dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh);
    }
    m.view(grad, s.wq).noalias() += lc.a.transpose() * dq;
    m.view(grad, s.bq).row(0) += dq.colwise().sum();
    m.view(grad, s.wk).noalias() += lc.a.transpose() * dk;
    m.view(grad, s.bk).row(0) += dk.colwise().sum();
    m.view(grad, s.wv).noalias() += lc.a.transpose() * dv;
    m.view(grad, s.bv).row(0) += dv.colwise().sum();
    const Matrix da_in = dq * m.param(s.wq).transpose() + dk * m.param(s.wk).transpose() + dv * m.param(s.wv).transpose();
    dx = dmid + detail::layer_norm_backward(da_in, lc.ln1, m.param(s.ln1_g), m.view(grad, s.ln1_g), m.view(grad, s.ln1_b));
  }
  if (c.drop0.size()) dx = dx.cwiseProduct(c.drop0);
  const Input& in = *c.input;
  const int t = in.length();
  auto dpos = m.view(grad, m.pos_slot());
  dpos.topRows(t) += dx;
  if (cfg.input == InputKind::tokens) {
    auto demb = m.view(grad, m.embed_slot());
    for (int i = 0; i < t; ++i) demb.row(in.ids[static_cast<std::size_t>(i)]) += dx.row(i);
  } else {
    m.view(grad, m.embed_slot()).noalias() += in.dense.transpose() * dx;
    m.view(grad, m.embed_bias_slot()).row(0) += dx.colwise().sum();
  }
}

/// Classification logits from the position-0 state.
inline RowVector head_logits(const TransformerModel& m, const EncoderCache& c) {
  return c.z.row(0) * m.param(m.head_weight_slot()) + m.param(m.head_bias_slot()).row(0);
}

struct ForwardResult {
  Matrix logits;  // N x C
  Matrix pooled;  // N x hidden (position-0 states)
};

inline ForwardResult forward(const TransformerModel& m, std::span<const Input> batch) {
  ForwardResult r;
  r.logits.resize(static_cast<Eigen::Index>(batch.size()), m.config().classes);
  r.pooled.resize(static_cast<Eigen::Index>(batch.size()), m.config().hidden);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto c = encode(m, batch[i]);
    r.pooled.row(static_cast<Eigen::Index>(i)) = c.z.row(0);
    r.logits.row(static_cast<Eigen::Index>(i)) = head_logits(m, c);
  }
  require(r.logits.allFinite(), "neural", "non-finite activations");
  return r;
}

inline ForwardResult forward(const TransformerModel& m, std::span<const tokenizer::TokenSequence> batch) {
  const auto inputs = to_inputs(batch, m.config());
  return forward(m, std::span<const Input>(inputs));
}

inline ProbMatrix nn_predict_proba(const TransformerModel& m, std::span<const Input> batch) {
  return softmax_rows_copy(forward(m, batch).logits);
}

inline ProbMatrix nn_predict_proba(const TransformerModel& m, std::span<const tokenizer::TokenSequence> batch) {
  return softmax_rows_copy(forward(m, batch).logits);
}

inline LabelVector nn_predict(const TransformerModel& m, std::span<const Input> batch) {
  return argmax_rows(nn_predict_proba(m, batch));
}

// ---------------------------------------------------------------- training --

/// Mean softmax cross-entropy over `batch` and its gradient (accumulated into
/// `grad`, scaled by 1/N).
inline double classifier_loss_and_grad(const TransformerModel& m, std::span<const Input> batch, std::span<const int> labels,
                                       std::vector<double>& grad, Rng* dropout_rng) {
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto c = encode(m, batch[i], {dropout_rng});
    const RowVector logits = head_logits(m, c);
    const int y = labels[i];
    require(y >= 0 && y < m.config().classes, "neural", "label out of range");
    const double mx = logits.maxCoeff();
    RowVector p = (logits.array() - mx).exp();
    const double z = p.sum();
    p /= z;
    loss += (mx + std::log(z) - logits(y)) * inv_n;
    RowVector dlogits = p * inv_n;
    dlogits(y) -= inv_n;
    m.view(grad, m.head_weight_slot()).noalias() += c.z.row(0).transpose() * dlogits;
    m.view(grad, m.head_bias_slot()).row(0) += dlogits;
    Matrix dz = Matrix::Zero(c.z.rows(), c.z.cols());
    dz.row(0) = dlogits * m.param(m.head_weight_slot()).transpose();
    backward_encoder(m, c, dz, grad);
  }
  return loss;
}

inline double classifier_loss(const TransformerModel& m, std::span<const Input> batch, std::span<const int> labels) {
  double loss = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const RowVector logits = head_logits(m, encode(m, batch[i]));
    const double mx = logits.maxCoeff();
    loss += mx + std::log((logits.array() - mx).exp().sum()) - logits(labels[i]);
  }
  return loss / static_cast<double>(batch.size());
}

/// Adam with bias correction over a flat parameter buffer.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_ = 3e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<double> m_, v_;
  long t_ = 0;
};

/// Rescales `grad` to at most `max_norm` in L2 (no-op when max_norm <= 0).
inline void clip_grad_norm(std::vector<double>& grad, double max_norm) {
  if (max_norm <= 0) return;
  double s = 0;
  for (double g : grad) s += g * g;
  const double n = std::sqrt(s);
  if (n > max_norm)
    for (double& g : grad) g *= max_norm / n;
}

struct LossPoint {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
};

struct LossCurve {
  std::vector<LossPoint> points;

  std::size_t size() const { return points.size(); }

  std::string to_csv() const {
    std::ostringstream f;
    f.precision(17);
    f << "epoch,train_loss,val_loss\n";
    for (const auto& p : points) f << p.epoch << ',' << p.train_loss << ',' << p.val_loss << '\n';
    return f.str();
  }

  static LossCurve from_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    require(std::getline(in, line) && line == "epoch,train_loss,val_loss", "neural", "not a loss curve CSV");
    LossCurve c;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      LossPoint p;
      char a = 0, b = 0;
      require(static_cast<bool>(row >> p.epoch >> a >> p.train_loss >> b >> p.val_loss) && a == ',' && b == ',', "neural",
              "malformed loss curve row '" + line + "'");
      c.points.push_back(p);
    }
    return c;
  }

  bool operator==(const LossCurve& o) const {
    if (points.size() != o.points.size()) return false;
    for (std::size_t i = 0; i < points.size(); ++i)
      if (points[i].epoch != o.points[i].epoch || points[i].train_loss != o.points[i].train_loss ||
          points[i].val_loss != o.points[i].val_loss)
        return false;
    return true;
  }
};

struct TrainOptions {
  int epochs = 10;
  double learning_rate = 3e-4;
  int batch_size = 16;
  std::uint64_t seed = 1;
  double clip_norm = 1.0;
  // Stop after the first epoch whose validation accuracy reaches this value
  // (disabled when > 1).
  double stop_at_val_accuracy = 2.0;
};

struct LabeledInputs {
  std::vector<Input> inputs;
  LabelVector labels;

  std::size_t size() const { return inputs.size(); }
};

/// Mini-batch Adam on softmax cross-entropy. Batch order is a seeded shuffle
/// per epoch; each curve point is the epoch-end loss over the full train and
/// validation sets with dropout off.
inline std::pair<TransformerModel, LossCurve> train_classifier(TransformerModel m, const LabeledInputs& train,
                                                               const LabeledInputs& val, const TrainOptions& opt) {
  require(train.size() > 0 && train.inputs.size() == train.labels.size(), "neural", "empty or inconsistent training data");
  require(val.inputs.size() == val.labels.size(), "neural", "inconsistent validation data");
  require(opt.batch_size >= 1 && opt.epochs >= 1 && opt.learning_rate >= 0, "neural", "invalid training options");
  for (int y : train.labels) require(y >= 0 && y < m.config().classes, "neural", "training label out of range");
  Adam adam(m.parameter_count(), opt.learning_rate);
  std::vector<double> grad(m.parameter_count());
  LossCurve curve;
  std::vector<Input> batch;
  LabelVector batch_labels;
  for (int e = 0; e < opt.epochs; ++e) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng = make_rng(opt.seed, 0x6F72646572ULL + static_cast<std::uint64_t>(e));
    shuffle(order, order_rng);
    Rng dropout_rng = make_rng(opt.seed, 0x64726F70ULL + static_cast<std::uint64_t>(e));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      batch.clear();
      batch_labels.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(train.inputs[order[k]]);
        batch_labels.push_back(train.labels[order[k]]);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = classifier_loss_and_grad(m, batch, batch_labels, grad, &dropout_rng);
      if (!std::isfinite(loss)) throw Error("neural", "training diverged (non-finite loss) at epoch " + std::to_string(e));
      clip_grad_norm(grad, opt.clip_norm);
      adam.step(m.params(), grad);
    }
    LossPoint p;
    p.epoch = e;
    p.train_loss = classifier_loss(m, train.inputs, train.labels);
    p.val_loss = val.size() ? classifier_loss(m, val.inputs, val.labels) : 0.0;
    if (!std::isfinite(p.train_loss) || !std::isfinite(p.val_loss))
      throw Error("neural", "training diverged (non-finite loss) at epoch " + std::to_string(e));
    curve.points.push_back(p);
    if (opt.stop_at_val_accuracy <= 1.0 && val.size()) {
      const LabelVector pred = nn_predict(m, val.inputs);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == val.labels[i];
      if (static_cast<double>(hits) / static_cast<double>(pred.size()) >= opt.stop_at_val_accuracy) break;
    }
  }
  m.phase = "finetuned";
  return {std::move(m), std::move(curve)};
}

// ------------------------------------------------------------- grad check --

struct GradCheckResult {
  double max_relative_error = 0;
  std::size_t coordinates = 0;
  std::vector<std::string> groups_checked;
  std::string worst_group;
};

/// Relative error |a - n| / max(|a|, |n|, 1e-6). The floor keeps coordinates
/// whose true gradient is ~0 from turning finite-difference round-off into a
/// large ratio.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Compares back-propagated gradients of the mean classification loss (no
/// dropout) with central differences on a seeded sample of coordinates drawn
/// from every parameter group accepted by `group_filter`.
inline GradCheckResult grad_check(TransformerModel m, std::span<const Input> batch, std::span<const int> labels,
                                  double epsilon = 1e-5, std::size_t min_coordinates = 200, std::uint64_t seed = 7,
                                  const std::function<bool(const ParamGroup&)>& group_filter = {}) {
  std::vector<double> grad(m.parameter_count(), 0.0);
  classifier_loss_and_grad(m, batch, labels, grad, nullptr);
  std::vector<std::size_t> slots;
  for (std::size_t s = 0; s < m.groups().size(); ++s)
    if (!group_filter || group_filter(m.groups()[s])) slots.push_back(s);
  require(!slots.empty(), "neural", "grad check selected no parameter groups");
  const std::size_t per_group = (min_coordinates + slots.size() - 1) / slots.size();
  Rng rng = make_rng(seed, 0x67726164ULL);
  GradCheckResult r;
  for (std::size_t s : slots) {
    const auto& g = m.groups()[s];
    r.groups_checked.push_back(g.name);
    const std::size_t take = std::min(per_group, g.size());
    // sample without replacement when the group is small
    std::vector<std::size_t> picks;
    if (take == g.size()) {
      for (std::size_t i = 0; i < g.size(); ++i) picks.push_back(i);
    } else {
      while (picks.size() < take) {
        const std::size_t i = uniform_index(rng, g.size());
        if (std::find(picks.begin(), picks.end(), i) == picks.end()) picks.push_back(i);
      }
    }
    for (std::size_t i : picks) {
      double& p = m.params()[g.offset + i];
      const double saved = p;
      p = saved + epsilon;
      const double up = classifier_loss(m, batch, labels);
      p = saved - epsilon;
      const double down = classifier_loss(m, batch, labels);
      p = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = relative_error(grad[g.offset + i], numeric);
      if (err > r.max_relative_error) {
        r.max_relative_error = err;
        r.worst_group = g.name;
      }
      ++r.coordinates;
    }
  }
  return r;
}

// ------------------------------------------------------------- checkpoints --

/// Checkpoint container: a text header (format tag, phase, config) followed
/// by the flat parameter array as little-endian float64.
inline void save_checkpoint(const TransformerModel& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "neural", "cannot write '" + path.string() + "'");
  const auto& c = m.config();
  f.precision(17);
  f << "stackens-transformer v1\n"
    << "phase " << m.phase << "\n"
    << "layers " << c.layers << "\nhidden " << c.hidden << "\nheads " << c.heads << "\nffn_multiplier " << c.ffn_multiplier
    << "\nmax_len " << c.max_len << "\nvocab_size " << c.vocab_size << "\nclasses " << c.classes << "\nlineage "
    << to_string(c.lineage) << "\ndropout " << c.dropout << "\ninput " << (c.input == InputKind::tokens ? "tokens" : "dense")
    << "\ninput_dim " << c.input_dim << "\nparams " << m.parameter_count() << "\n";
  f.write(reinterpret_cast<const char*>(m.params().data()), static_cast<std::streamsize>(m.parameter_count() * sizeof(double)));
  require(static_cast<bool>(f), "neural", "failed writing '" + path.string() + "'");
}

inline TransformerModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "neural", "cannot open '" + path.string() + "'");
  std::string line;
  require(std::getline(f, line) && line == "stackens-transformer v1", "neural", "not a stackens transformer checkpoint");
  const auto field = [&](const char* name) {
    require(static_cast<bool>(std::getline(f, line)), "neural", "truncated checkpoint header");
    const auto sp = line.find(' ');
    require(sp != std::string::npos && line.substr(0, sp) == name, "neural", std::string("expected '") + name + "' in checkpoint");
    return line.substr(sp + 1);
  };
  TransformerConfig c;
  const std::string phase = field("phase");
  c.layers = std::stoi(field("layers"));
  c.hidden = std::stoi(field("hidden"));
  c.heads = std::stoi(field("heads"));
  c.ffn_multiplier = std::stoi(field("ffn_multiplier"));
  c.max_len = std::stoi(field("max_len"));
  c.vocab_size = std::stoi(field("vocab_size"));
  c.classes = std::stoi(field("classes"));
  c.lineage = lineage_from_string(field("lineage"));
  c.dropout = std::stod(field("dropout"));
  c.input = field("input") == "dense" ? InputKind::dense : InputKind::tokens;
  c.input_dim = std::stoi(field("input_dim"));
  const std::size_t n = std::stoul(field("params"));
  TransformerModel m(c);
  require(n == m.parameter_count(), "neural", "checkpoint parameter count does not match its config");
  f.read(reinterpret_cast<char*>(m.params().data()), static_cast<std::streamsize>(n * sizeof(double)));
  require(static_cast<bool>(f), "neural", "truncated checkpoint parameters");
  m.phase = phase;
  return m;
}

}  // namespace stackens::neural
