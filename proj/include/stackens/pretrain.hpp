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

#include "stackens/neural.hpp"

#include <functional>
#include <string>
#include <vector>

namespace stackens::pretrain {

using neural::Input;
using neural::TransformerConfig;
using neural::TransformerModel;

struct MaskingSpec {
  double mask_rate = 0.15;
  bool dynamic = true;
  double mask_token_fraction = 0.8;
  double random_fraction = 0.1;
  double keep_fraction = 0.1;

  void validate() const {
    for (double f : {mask_rate, mask_token_fraction, random_fraction, keep_fraction})
      require(f >= 0 && f <= 1, "pretrain", "masking fractions must lie in [0, 1]");
    require(std::abs(mask_token_fraction + random_fraction + keep_fraction - 1.0) < 1e-9, "pretrain",
            "mask/random/keep split must sum to 1");
  }
};

struct DistillSpec {
  double temperature = 2.0;
  double soft_weight = 0.5;
  double hard_weight = 0.5;

  void validate() const {
    require(temperature > 0, "pretrain", "distillation temperature must be positive");
    require(soft_weight >= 0 && hard_weight >= 0 && soft_weight + hard_weight > 0, "pretrain",
            "distillation weights must be non-negative and not both zero");
  }
};

struct PretrainOptions {
  int epochs = 3;
  double learning_rate = 1e-3;
  int batch_size = 16;
  std::uint64_t seed = 1;
  double clip_norm = 1.0;
  // Receives one mean objective value per optimiser step when set.
  std::vector<double>* trace = nullptr;
  // Called after each epoch with the model being trained.
  std::function<void(int, const TransformerModel&)> on_epoch;
};

/// A corrupted copy of one sequence and the positions to reconstruct.
struct MaskedSequence {
  Input input;
  std::vector<int> positions;
  std::vector<int> targets;
};

/// Positions eligible for masking: valid, non-special tokens.
inline bool maskable(int id) { return id >= tokenizer::SpecialIds::count; }

/// Bernoulli(mask_rate) per maskable position; each chosen position becomes
/// <mask>, a random non-special id, or stays, in the spec's proportions.
/// Static masking always draws from epoch 0's stream, so epoch e's masks
/// depend only on (seed, e) when dynamic and only on the seed otherwise.
inline std::vector<MaskedSequence> make_masks(std::span<const Input> corpus, const MaskingSpec& spec, int vocab_size,
                                              std::uint64_t seed, int epoch) {
  spec.validate();
  require(vocab_size > tokenizer::SpecialIds::count, "pretrain", "vocabulary has no maskable ids");
  const int e = spec.dynamic ? epoch : 0;
  Rng rng = make_rng(seed, 0x6D61736BULL + static_cast<std::uint64_t>(e));
  const auto non_special = static_cast<std::uint64_t>(vocab_size - tokenizer::SpecialIds::count);
  std::vector<MaskedSequence> out;
  out.reserve(corpus.size());
  std::size_t total = 0;
  for (const auto& in : corpus) {
    MaskedSequence ms;
    ms.input = in;
    for (std::size_t t = 0; t < in.ids.size(); ++t) {
      if (!maskable(in.ids[t])) continue;
      if (uniform01(rng) >= spec.mask_rate) continue;
      ms.positions.push_back(static_cast<int>(t));
      ms.targets.push_back(in.ids[t]);
      const double u = uniform01(rng);
      if (u < spec.mask_token_fraction)
        ms.input.ids[t] = tokenizer::SpecialIds::mask;
      else if (u < spec.mask_token_fraction + spec.random_fraction)
        ms.input.ids[t] = tokenizer::SpecialIds::count + static_cast<int>(uniform_index(rng, non_special));
    }
    total += ms.positions.size();
    out.push_back(std::move(ms));
  }
  require(total > 0, "pretrain", "mask_rate yields zero masked positions on every sequence");
  return out;
}

/// MLM output bias; the projection itself is the (tied) token embedding.
struct MlmHead {
  std::vector<double> bias;

  explicit MlmHead(int vocab_size = 0) : bias(static_cast<std::size_t>(vocab_size), 0.0) {}
};

namespace detail {

inline void require_token_model(const TransformerModel& m) {
  require(m.config().input == neural::InputKind::tokens, "pretrain", "pretraining needs a token-input model");
}

// Logits over the vocabulary at one position: z_t E^T + bias.
inline RowVector mlm_logits(const TransformerModel& m, const MlmHead& head, const RowVector& z) {
  const auto emb = m.param(m.embed_slot());
  RowVector logits = z * emb.transpose();
  for (Eigen::Index v = 0; v < logits.size(); ++v) logits(v) += head.bias[static_cast<std::size_t>(v)];
  return logits;
}

inline double log_softmax_at(const RowVector& logits, int y) {
  const double mx = logits.maxCoeff();
  return logits(y) - mx - std::log((logits.array() - mx).exp().sum());
}

// Mean masked-position CE over `batch`, accumulating gradients scaled by
// 1/(masked positions) when grad buffers are given.
inline double mlm_batch(const TransformerModel& m, const MlmHead& head, std::span<const MaskedSequence> batch,
                        std::vector<double>* grad, std::vector<double>* head_grad, Rng* dropout_rng,
                        std::vector<neural::EncoderCache>* caches = nullptr) {
  std::size_t count = 0;
  for (const auto& s : batch) count += s.positions.size();
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  double loss = 0;
  for (const auto& s : batch) {
    if (s.positions.empty()) continue;
    auto c = neural::encode(m, s.input, {dropout_rng});
    Matrix dz = Matrix::Zero(c.z.rows(), c.z.cols());
    for (std::size_t k = 0; k < s.positions.size(); ++k) {
      const int t = s.positions[k], y = s.targets[k];
      const RowVector logits = mlm_logits(m, head, c.z.row(t));
      loss -= log_softmax_at(logits, y) * inv;
      if (!grad) continue;
      RowVector d = softmax_rows_copy(Matrix(logits)).row(0) * inv;
      d(y) -= inv;
      dz.row(t) += d * m.param(m.embed_slot());
      m.view(*grad, m.embed_slot()).noalias() += d.transpose() * c.z.row(t);
      for (Eigen::Index v = 0; v < d.size(); ++v) (*head_grad)[static_cast<std::size_t>(v)] += d(v);
    }
    if (grad) neural::backward_encoder(m, c, dz, *grad);
    if (caches) caches->push_back(std::move(c));
  }
  return loss;
}

template <typename F>
void for_each_batch(std::size_t n, int batch_size, std::uint64_t seed, int epoch, F&& f) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(seed, 0x62617463ULL + static_cast<std::uint64_t>(epoch));
  shuffle(order, rng);
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    f(std::span<const std::size_t>(order.data() + start, end - start));
  }
}

inline void check_finite(double loss, const char* what, int epoch) {
  if (!std::isfinite(loss))
    throw Error("pretrain", std::string(what) + " diverged (non-finite loss) at epoch " + std::to_string(epoch));
}

}  // namespace detail

/// Mean cross-entropy at masked positions (dropout off).
inline double mlm_loss(const TransformerModel& m, const MlmHead& head, std::span<const MaskedSequence> masked) {
  detail::require_token_model(m);
  return detail::mlm_batch(m, head, masked, nullptr, nullptr, nullptr);
}

/// Masked language modelling with the output projection tied to the token
/// embedding table. Returns the encoder tagged "pretrained"; the head bias is
/// written to `head_out` when given.
inline TransformerModel mlm_pretrain(TransformerModel m, std::span<const Input> corpus, const MaskingSpec& spec,
                                     const PretrainOptions& opt, MlmHead* head_out = nullptr) {
  detail::require_token_model(m);
  require(!corpus.empty() && opt.epochs >= 1 && opt.batch_size >= 1, "pretrain", "empty corpus or invalid options");
  MlmHead head(m.config().vocab_size);
  neural::Adam adam(m.parameter_count(), opt.learning_rate), head_adam(head.bias.size(), opt.learning_rate);
  std::vector<double> grad(m.parameter_count()), head_grad(head.bias.size());
  std::vector<MaskedSequence> batch;
  for (int e = 0; e < opt.epochs; ++e) {
    const auto masked = make_masks(corpus, spec, m.config().vocab_size, opt.seed, e);
    Rng dropout_rng = make_rng(opt.seed, 0x6D6C6D64ULL + static_cast<std::uint64_t>(e));
    detail::for_each_batch(masked.size(), opt.batch_size, opt.seed, e, [&](std::span<const std::size_t> idx) {
      batch.clear();
      for (std::size_t i : idx) batch.push_back(masked[i]);
      std::fill(grad.begin(), grad.end(), 0.0);
      std::fill(head_grad.begin(), head_grad.end(), 0.0);
      const double loss = detail::mlm_batch(m, head, batch, &grad, &head_grad, &dropout_rng);
      detail::check_finite(loss, "MLM pretraining", e);
      if (opt.trace) opt.trace->push_back(loss);
      neural::clip_grad_norm(grad, opt.clip_norm);
      adam.step(m.params(), grad);
      head_adam.step(head.bias, head_grad);
    });
    if (opt.on_epoch) opt.on_epoch(e, m);
  }
  m.phase = "pretrained";
  if (head_out) *head_out = std::move(head);
  return m;
}

/// Replaced-token labels: 1 exactly where the sampled sequence differs from
/// the original.
inline std::vector<int> rtd_labels(std::span<const int> original, std::span<const int> sampled) {
  require(original.size() == sampled.size(), "pretrain", "sequence lengths differ");
  std::vector<int> y(original.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = original[i] != sampled[i] ? 1 : 0;
  return y;
}

/// Fills each masked position with a token sampled from the generator's
/// softmax at that position; other positions keep the original id.
inline std::vector<int> sample_replacements(const TransformerModel& generator, const MlmHead& head, const MaskedSequence& s,
                                            const Input& original, Rng& rng) {
  std::vector<int> out = original.ids;
  if (s.positions.empty()) return out;
  const auto c = neural::encode(generator, s.input);
  for (int t : s.positions) {
    RowVector p = detail::mlm_logits(generator, head, c.z.row(t));
    p = softmax_rows_copy(Matrix(p)).row(0);
    const double u = uniform01(rng);
    double acc = 0;
    int pick = static_cast<int>(p.size()) - 1;
    for (Eigen::Index v = 0; v < p.size(); ++v) {
      acc += p(v);
      if (u < acc) {
        pick = static_cast<int>(v);
        break;
      }
    }
    out[static_cast<std::size_t>(t)] = pick;
  }
  return out;
}

/// Discriminator head for replaced-token detection: one logit per position.
struct RtdHead {
  std::vector<double> weight;  // hidden
  double bias = 0;

  explicit RtdHead(int hidden = 0) : weight(static_cast<std::size_t>(hidden), 0.0) {}
};

/// Mean per-position BCE of the discriminator over every valid position.
/// Accumulates gradients scaled by 1/(positions) when buffers are given.
inline double rtd_batch(const TransformerModel& d, const RtdHead& head, std::span<const Input> sampled,
                        std::span<const std::vector<int>> labels, std::vector<double>* grad, std::vector<double>* head_grad,
                        Rng* dropout_rng) {
  std::size_t count = 0;
  for (const auto& s : sampled) count += s.ids.size();
  const double inv = 1.0 / static_cast<double>(count);
  const Eigen::Map<const Vector> w(head.weight.data(), static_cast<Eigen::Index>(head.weight.size()));
  double loss = 0;
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    const auto c = neural::encode(d, sampled[i], {dropout_rng});
    const Vector logits = (c.z * w).array() + head.bias;
    Matrix dz(c.z.rows(), c.z.cols());
    for (Eigen::Index t = 0; t < logits.size(); ++t) {
      const double y = labels[i][static_cast<std::size_t>(t)];
      const double x = logits(t);
      // numerically stable BCE on logits
      loss += (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)))) * inv;
      const double g = (sigmoid(x) - y) * inv;
      dz.row(t) = g * w.transpose();
      if (head_grad) {
        for (Eigen::Index k = 0; k < c.z.cols(); ++k) (*head_grad)[static_cast<std::size_t>(k)] += g * c.z(t, k);
        head_grad->back() += g;
      }
    }
    if (grad) neural::backward_encoder(d, c, dz, *grad);
  }
  return loss;
}

/// ELECTRA-style joint training: the generator learns MLM on masked inputs,
/// its samples fill the masked positions, and the discriminator learns
/// per-position original/replaced BCE. Returns the discriminator, tagged
/// "pretrained".
inline TransformerModel rtd_pretrain(TransformerModel generator, TransformerModel discriminator, std::span<const Input> corpus,
                                     const MaskingSpec& spec, const PretrainOptions& opt) {
  detail::require_token_model(generator);
  detail::require_token_model(discriminator);
  require(generator.config().vocab_size == discriminator.config().vocab_size, "pretrain",
          "generator and discriminator vocabularies differ");
  require(!corpus.empty() && opt.epochs >= 1 && opt.batch_size >= 1, "pretrain", "empty corpus or invalid options");
  MlmHead gen_head(generator.config().vocab_size);
  RtdHead disc_head(discriminator.config().hidden);
  neural::Adam gen_adam(generator.parameter_count(), opt.learning_rate), gen_head_adam(gen_head.bias.size(), opt.learning_rate);
  neural::Adam disc_adam(discriminator.parameter_count(), opt.learning_rate),
      disc_head_adam(disc_head.weight.size() + 1, opt.learning_rate);
  std::vector<double> g_grad(generator.parameter_count()), g_head_grad(gen_head.bias.size());
  std::vector<double> d_grad(discriminator.parameter_count()), d_head_grad(disc_head.weight.size() + 1);
  std::vector<double> d_head_params(disc_head.weight.size() + 1);
  std::vector<MaskedSequence> batch;
  std::vector<Input> sampled;
  std::vector<std::vector<int>> labels;
  for (int e = 0; e < opt.epochs; ++e) {
    const auto masked = make_masks(corpus, spec, generator.config().vocab_size, opt.seed, e);
    Rng dropout_rng = make_rng(opt.seed, 0x72746464ULL + static_cast<std::uint64_t>(e));
    Rng sample_rng = make_rng(opt.seed, 0x73616D70ULL + static_cast<std::uint64_t>(e));
    detail::for_each_batch(masked.size(), opt.batch_size, opt.seed, e, [&](std::span<const std::size_t> idx) {
      batch.clear();
      sampled.clear();
      labels.clear();
      for (std::size_t i : idx) {
        batch.push_back(masked[i]);
        Input s;
        s.ids = sample_replacements(generator, gen_head, masked[i], corpus[i], sample_rng);
        labels.push_back(rtd_labels(corpus[i].ids, s.ids));
        sampled.push_back(std::move(s));
      }
      std::fill(g_grad.begin(), g_grad.end(), 0.0);
      std::fill(g_head_grad.begin(), g_head_grad.end(), 0.0);
      const double g_loss = detail::mlm_batch(generator, gen_head, batch, &g_grad, &g_head_grad, &dropout_rng);
      detail::check_finite(g_loss, "RTD generator", e);
      neural::clip_grad_norm(g_grad, opt.clip_norm);
      gen_adam.step(generator.params(), g_grad);
      gen_head_adam.step(gen_head.bias, g_head_grad);

      std::fill(d_grad.begin(), d_grad.end(), 0.0);
      std::fill(d_head_grad.begin(), d_head_grad.end(), 0.0);
      const double d_loss = rtd_batch(discriminator, disc_head, sampled, labels, &d_grad, &d_head_grad, &dropout_rng);
      detail::check_finite(d_loss, "RTD discriminator", e);
      if (opt.trace) opt.trace->push_back(d_loss);
      neural::clip_grad_norm(d_grad, opt.clip_norm);
      disc_adam.step(discriminator.params(), d_grad);
      std::copy(disc_head.weight.begin(), disc_head.weight.end(), d_head_params.begin());
      d_head_params.back() = disc_head.bias;
      disc_head_adam.step(d_head_params, d_head_grad);
      std::copy(d_head_params.begin(), d_head_params.end() - 1, disc_head.weight.begin());
      disc_head.bias = d_head_params.back();
    });
    if (opt.on_epoch) opt.on_epoch(e, discriminator);
  }
  discriminator.phase = "pretrained";
  return discriminator;
}

/// Generator config for RTD: same width and vocabulary, a quarter of the
/// depth (at least one layer).
inline TransformerConfig generator_config(const TransformerConfig& disc) {
  TransformerConfig g = disc;
  g.layers = std::max(1, disc.layers / 4);
  return g;
}

/// KL(teacher || student) of temperature-softened distributions, per row.
inline Vector distill_kl_rows(const Matrix& teacher_logits, const Matrix& student_logits, double temperature) {
  require(teacher_logits.rows() == student_logits.rows() && teacher_logits.cols() == student_logits.cols(), "pretrain",
          "teacher and student logits differ in shape");
  const ProbMatrix pt = softmax_rows_copy(teacher_logits / temperature);
  const ProbMatrix ps = softmax_rows_copy(student_logits / temperature);
  Vector kl(pt.rows());
  for (Eigen::Index i = 0; i < pt.rows(); ++i) {
    double s = 0;
    for (Eigen::Index c = 0; c < pt.cols(); ++c)
      if (pt(i, c) > 0) s += pt(i, c) * (std::log(pt(i, c)) - std::log(std::max(ps(i, c), 1e-300)));
    kl(i) = std::max(0.0, s);
  }
  return kl;
}

struct DistillTerms {
  double kl = 0;         // mean KL at temperature T (nats)
  double hard = 0;       // mean hard-label cross-entropy
  double objective = 0;  // soft_weight * T^2 * kl + hard_weight * hard
};

/// Distillation objective on one batch of logits, and optionally its gradient
/// with respect to the student logits (mean over rows).
inline DistillTerms distill_objective(const Matrix& teacher_logits, const Matrix& student_logits, std::span<const int> labels,
                                      const DistillSpec& spec, Matrix* d_student = nullptr) {
  spec.validate();
  const auto n = student_logits.rows();
  require(static_cast<std::size_t>(n) == labels.size(), "pretrain", "labels and logits differ in length");
  const double t = spec.temperature;
  DistillTerms r;
  r.kl = distill_kl_rows(teacher_logits, student_logits, t).mean();
  const ProbMatrix ps1 = softmax_rows_copy(student_logits);
  for (Eigen::Index i = 0; i < n; ++i)
    r.hard -= std::log(std::max(ps1(i, labels[static_cast<std::size_t>(i)]), 1e-300)) / static_cast<double>(n);
  r.objective = spec.soft_weight * t * t * r.kl + spec.hard_weight * r.hard;
  if (d_student) {
    const ProbMatrix pt = softmax_rows_copy(teacher_logits / t);
    const ProbMatrix ps = softmax_rows_copy(student_logits / t);
    Matrix onehot = Matrix::Zero(n, student_logits.cols());
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;
    *d_student = (spec.soft_weight * t * (ps - pt) + spec.hard_weight * (ps1 - onehot)) / static_cast<double>(n);
  }
  return r;
}

/// Mean held-out KL between teacher and student at temperature T.
inline double distill_kl(const TransformerModel& teacher, const TransformerModel& student, std::span<const Input> inputs,
                         double temperature) {
  return distill_kl_rows(neural::forward(teacher, inputs).logits, neural::forward(student, inputs).logits, temperature).mean();
}

/// Trains a freshly initialised student on the teacher's softened outputs
/// plus the hard labels. `opt.trace`, when set, receives each batch's KL term.
inline TransformerModel distill(const TransformerModel& teacher, const TransformerConfig& student_cfg,
                                const neural::LabeledInputs& corpus, const DistillSpec& spec, const PretrainOptions& opt) {
  spec.validate();
  require(student_cfg.layers <= teacher.config().layers, "pretrain", "student must not be deeper than the teacher");
  require(student_cfg.classes == teacher.config().classes, "pretrain", "student and teacher class counts differ");
  require(corpus.size() > 0 && opt.epochs >= 1 && opt.batch_size >= 1, "pretrain", "empty corpus or invalid options");
  TransformerModel student = neural::init_transformer(student_cfg, opt.seed);
  const Matrix teacher_logits = neural::forward(teacher, corpus.inputs).logits;
  neural::Adam adam(student.parameter_count(), opt.learning_rate);
  std::vector<double> grad(student.parameter_count());
  for (int e = 0; e < opt.epochs; ++e) {
    Rng dropout_rng = make_rng(opt.seed, 0x64697374ULL + static_cast<std::uint64_t>(e));
    detail::for_each_batch(corpus.size(), opt.batch_size, opt.seed, e, [&](std::span<const std::size_t> idx) {
      const auto b = static_cast<Eigen::Index>(idx.size());
      std::vector<neural::EncoderCache> caches;
      Matrix s_logits(b, student_cfg.classes), t_logits(b, student_cfg.classes);
      LabelVector y;
      for (Eigen::Index k = 0; k < b; ++k) {
        const std::size_t i = idx[static_cast<std::size_t>(k)];
        caches.push_back(neural::encode(student, corpus.inputs[i], {&dropout_rng}));
        s_logits.row(k) = neural::head_logits(student, caches.back());
        t_logits.row(k) = teacher_logits.row(static_cast<Eigen::Index>(i));
        y.push_back(corpus.labels[i]);
      }
      Matrix d;
      const auto terms = distill_objective(t_logits, s_logits, y, spec, &d);
      detail::check_finite(terms.objective, "distillation", e);
      if (opt.trace) opt.trace->push_back(terms.kl);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (Eigen::Index k = 0; k < b; ++k) {
        const auto& c = caches[static_cast<std::size_t>(k)];
        const RowVector dl = d.row(k);
        student.view(grad, student.head_weight_slot()).noalias() += c.z.row(0).transpose() * dl;
        student.view(grad, student.head_bias_slot()).row(0) += dl;
        Matrix dz = Matrix::Zero(c.z.rows(), c.z.cols());
        dz.row(0) = dl * student.param(student.head_weight_slot()).transpose();
        neural::backward_encoder(student, c, dz, grad);
      }
      neural::clip_grad_norm(grad, opt.clip_norm);
      adam.step(student.params(), grad);
    });
    if (opt.on_epoch) opt.on_epoch(e, student);
  }
  student.phase = "finetuned";
  return student;
}

}  // namespace stackens::pretrain
