/*
 * Copyright 2026 The Seg-TTO Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segtto/backend.hpp"
#include "segtto/config.hpp"
#include "segtto/core.hpp"
#include "segtto/error.hpp"
#include "segtto/objective.hpp"

namespace segtto {

/// A learnable prompt g_k: token embeddings before and after the category
/// slot.
struct PromptSlot {
  std::string text;
  TokenSequence prefix;
  TokenSequence suffix;
  bool operator==(const PromptSlot&) const = default;
};

/// First and second moment estimates of the adaptive optimizer.
struct AdamState {
  Vec first;
  Vec second;
  long steps = 0;
  bool operator==(const AdamState&) const = default;
};

/// Learnable textual state for one image: shared prompts g_k, per-category
/// embeddings c_j, the initial values they are reset to, and optimizer
/// moments.
struct PromptBank {
  std::vector<PromptSlot> general;
  std::vector<TokenSequence> per_class;
  std::vector<std::string> class_labels;
  std::vector<PromptSlot> general_snapshot;
  std::vector<TokenSequence> per_class_snapshot;
  AdamState optimizer;

  std::size_t prompt_count() const { return general.size(); }
  std::size_t category_count() const { return per_class.size(); }

  /// Sequence fed to the text encoder for (category j, prompt k).
  TokenSequence compose(std::size_t j, std::size_t k) const {
    const auto& g = general.at(k);
    TokenSequence seq;
    seq.reserve(g.prefix.size() + per_class.at(j).size() + g.suffix.size());
    seq.insert(seq.end(), g.prefix.begin(), g.prefix.end());
    seq.insert(seq.end(), per_class[j].begin(), per_class[j].end());
    seq.insert(seq.end(), g.suffix.begin(), g.suffix.end());
    return seq;
  }

  std::size_t general_parameter_count() const {
    std::size_t n = 0;
    for (const auto& g : general)
      for (const auto* part : {&g.prefix, &g.suffix})
        for (const auto& t : *part) n += t.size();
    return n;
  }

  std::size_t parameter_count() const {
    std::size_t n = general_parameter_count();
    for (const auto& c : per_class)
      for (const auto& t : c) n += t.size();
    return n;
  }

  /// Parameters in a fixed order: every g_k (prefix, then suffix), then
  /// every c_j.
  Vec flatten() const {
    Vec out;
    out.reserve(parameter_count());
    for (const auto& g : general)
      for (const auto* part : {&g.prefix, &g.suffix})
        for (const auto& t : *part) out.insert(out.end(), t.begin(), t.end());
    for (const auto& c : per_class)
      for (const auto& t : c) out.insert(out.end(), t.begin(), t.end());
    return out;
  }

  void unflatten(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ArgumentError("unflatten: parameter count mismatch");
    std::size_t pos = 0;
    auto take = [&](Vec& t) {
      std::copy(flat.begin() + pos, flat.begin() + pos + t.size(), t.begin());
      pos += t.size();
    };
    for (auto& g : general) {
      for (auto& t : g.prefix) take(t);
      for (auto& t : g.suffix) take(t);
    }
    for (auto& c : per_class)
      for (auto& t : c) take(t);
  }
};

/// Builds a bank from prompt strings and the vocabulary. A prompt may hold
/// a `{}` slot for the category; otherwise the category is appended. c_j
/// starts from the category description when one is given.
inline PromptBank make_prompt_bank(const TextEncoder& encoder, const std::vector<std::string>& prompts,
                                   const CategoryVocabulary& vocab) {
  vocab.validate();
  if (prompts.empty()) throw ArgumentError("prompt bank needs at least one prompt");
  PromptBank bank;
  for (const auto& text : prompts) {
    PromptSlot slot;
    slot.text = text;
    const auto pos = text.find("{}");
    slot.prefix = encoder.embed_tokens(pos == std::string::npos ? std::string_view(text) : std::string_view(text).substr(0, pos));
    if (pos != std::string::npos) slot.suffix = encoder.embed_tokens(std::string_view(text).substr(pos + 2));
    bank.general.push_back(std::move(slot));
  }
  for (std::size_t j = 0; j < vocab.size(); ++j) {
    TokenSequence c = encoder.embed_tokens(vocab.display_name(j));
    if (c.empty()) throw ArgumentError("category '" + vocab.names[j] + "' has no tokens");
    bank.per_class.push_back(std::move(c));
    bank.class_labels.push_back(vocab.names[j]);
  }
  bank.general_snapshot = bank.general;
  bank.per_class_snapshot = bank.per_class;
  return bank;
}

/// Restores every learnable embedding to its initial value and clears the
/// optimizer moments.
inline PromptBank reset_bank(PromptBank bank) {
  bank.general = bank.general_snapshot;
  bank.per_class = bank.per_class_snapshot;
  bank.optimizer = AdamState{};
  return bank;
}

/// b_k^j for every category j and prompt k.
inline TextGrid compose_text_features(const PromptBank& bank, const TextEncoder& encoder) {
  TextGrid grid(bank.category_count());
  for (std::size_t j = 0; j < bank.category_count(); ++j) {
    grid[j].reserve(bank.prompt_count());
    for (std::size_t k = 0; k < bank.prompt_count(); ++k) {
      try {
        Vec v = encoder.encode_tokens(bank.compose(j, k));
        if (v.size() != encoder.dim()) throw ContractError("text encoder returned wrong dimension");
        grid[j].push_back({std::move(v), bank.class_labels[j], encoder.produces_normalized()});
      } catch (const Error& e) {
        throw EncoderError(bank.class_labels[j], "composing (category " + std::to_string(j) + ", prompt " +
                                                     std::to_string(k) + "): " + e.what());
      }
    }
  }
  return grid;
}

/// Gradient of a text-feature loss pulled back through the text encoder
/// onto the flattened bank parameters.
inline Vec backprop_to_bank(const PromptBank& bank, const TextEncoder& encoder,
                            const std::vector<std::vector<Vec>>& grad_text) {
  Vec grad(bank.parameter_count(), 0.0);
  // Offsets of each prompt's prefix/suffix and each class in the flat layout.
  std::vector<std::size_t> prefix_off(bank.prompt_count()), suffix_off(bank.prompt_count());
  std::vector<std::size_t> class_off(bank.category_count());
  std::size_t pos = 0;
  for (std::size_t k = 0; k < bank.prompt_count(); ++k) {
    prefix_off[k] = pos;
    for (const auto& t : bank.general[k].prefix) pos += t.size();
    suffix_off[k] = pos;
    for (const auto& t : bank.general[k].suffix) pos += t.size();
  }
  for (std::size_t j = 0; j < bank.category_count(); ++j) {
    class_off[j] = pos;
    for (const auto& t : bank.per_class[j]) pos += t.size();
  }
  for (std::size_t j = 0; j < bank.category_count(); ++j)
    for (std::size_t k = 0; k < bank.prompt_count(); ++k) {
      const TokenSequence seq = bank.compose(j, k);
      const TokenSequence g = encoder.backward(seq, grad_text[j][k]);
      const auto& slot = bank.general[k];
      std::size_t t = 0;
      auto add = [&](std::size_t offset, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i, ++t)
          for (std::size_t e = 0; e < g[t].size(); ++e) grad[offset + i * g[t].size() + e] += g[t][e];
      };
      add(prefix_off[k], slot.prefix.size());
      add(class_off[j], bank.per_class[j].size());
      add(suffix_off[k], slot.suffix.size());
    }
  return grad;
}

struct BankLossGradient {
  double value = 0.0;
  Vec grad;
};

inline BankLossGradient bank_loss_and_gradient(const PromptBank& bank, const TextEncoder& encoder,
                                               std::span<const FeatureMap> views, const SegTTOConfig& cfg,
                                               LossKind kind, std::span<const PseudoLabelMap> labels = {}) {
  const TextGrid text = compose_text_features(bank, encoder);
  const TextLossGradient tl =
      text_loss_and_gradient(views, text, cfg.temperature, kind, cfg.aggregation_mode, labels);
  return {tl.value, backprop_to_bank(bank, encoder, tl.grad)};
}

/// Pseudo-labels of each view under the current text features.
inline std::vector<PseudoLabelMap> current_pseudo_labels(const TextGrid& text, std::span<const FeatureMap> views,
                                                         const SegTTOConfig& cfg) {
  std::vector<PseudoLabelMap> out;
  out.reserve(views.size());
  for (std::size_t i = 0; i < views.size(); ++i)
    out.push_back(pseudo_labels(probability_map(views[i], text, cfg.temperature, static_cast<int>(i)),
                                cfg.pseudo_label_mode));
  return out;
}

/// Combined self-supervised loss value: entropy term plus pseudo-label
/// cross-entropy term, labels taken from the same features.
inline double combined_ssl(const PromptBank& bank, const TextEncoder& encoder, std::span<const FeatureMap> views,
                           const SegTTOConfig& cfg) {
  const TextGrid text = compose_text_features(bank, encoder);
  const auto labels = current_pseudo_labels(text, views, cfg);
  const double ent =
      text_loss_and_gradient(views, text, cfg.temperature, LossKind::kEntropy, cfg.aggregation_mode).value;
  const double ce =
      text_loss_and_gradient(views, text, cfg.temperature, LossKind::kCrossEntropy, cfg.aggregation_mode, labels)
          .value;
  return ent + ce;
}

/// Gradient surgery for two objectives. Conflicting gradients (negative dot
/// product) are each projected onto the normal plane of the other before
/// summing; otherwise the plain sum is returned.
/// g with its component along `other` removed when the two conflict
/// (negative dot product); otherwise g unchanged.
inline Vec pcgrad_project(std::span<const double> g, std::span<const double> other) {
  if (g.size() != other.size()) throw ArgumentError("pcgrad_project: gradient length mismatch");
  Vec out(g.begin(), g.end());
  const double go = dot(g, other);
  const double oo = dot(other, other);
  if (go >= 0.0 || oo <= 0.0) return out;
  const double c = go / oo;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= c * other[i];
  return out;
}

inline Vec pcgrad_combine(std::span<const double> g_a, std::span<const double> g_b) {
  if (g_a.size() != g_b.size()) throw ArgumentError("pcgrad_combine: gradient length mismatch");
  const Vec pa = pcgrad_project(g_a, g_b);
  const Vec pb = pcgrad_project(g_b, g_a);
  Vec out(g_a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  return out;
}

/// One decoupled-weight-decay adaptive moment step on the entries where
/// mask is true. Returns the L2 norm of the applied update.
inline double adamw_step(std::span<double> params, std::span<const double> grad, const std::vector<bool>& mask,
                         AdamState& state, const SegTTOConfig& cfg) {
  if (state.first.size() != params.size()) {
    state.first.assign(params.size(), 0.0);
    state.second.assign(params.size(), 0.0);
    state.steps = 0;
  }
  ++state.steps;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.steps));
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask[i]) continue;
    state.first[i] = cfg.adam_beta1 * state.first[i] + (1.0 - cfg.adam_beta1) * grad[i];
    state.second[i] = cfg.adam_beta2 * state.second[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
    const double m_hat = state.first[i] / bc1;
    const double v_hat = state.second[i] / bc2;
    const double before = params[i];
    params[i] -= cfg.learning_rate * cfg.weight_decay * params[i];
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
    const double delta = params[i] - before;
    sq += delta * delta;
  }
  return std::sqrt(sq);
}

struct TuningStepRecord {
  int step = 0;
  std::string loss_name;
  double value = 0.0;
  double update_norm = 0.0;
};

struct TuningTrace {
  std::vector<TuningStepRecord> steps;
  std::optional<double> initial_ssl;
  std::optional<double> final_ssl;
};

/// Thrown when a loss turns non-finite mid-optimization.
class TuningAborted : public NumericError {
 public:
  TuningAborted(const std::string& what, TuningTrace trace) : NumericError(what), trace_(std::move(trace)) {}
  const TuningTrace& trace() const noexcept { return trace_; }

 private:
  TuningTrace trace_;
};

struct TuningOutcome {
  PromptBank bank;
  TuningTrace trace;
};

inline std::vector<bool> tuned_mask(const PromptBank& bank, TunedComponent which) {
  const std::size_t g = bank.general_parameter_count();
  std::vector<bool> mask(bank.parameter_count(), false);
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = i < g ? which != TunedComponent::kClasses : which != TunedComponent::kPrompts;
  return mask;
}

/// Per-image textual feature tuning. The first min(entropy_steps, ce_steps)
/// steps update with the gradient-surgery combination of both losses; the
/// remaining steps use whichever loss has the larger budget alone. Each
/// loss evaluation is one trace record, so the trace holds
/// entropy_steps + ce_steps records.
inline TuningOutcome run_textual_tuning(PromptBank bank, const TextEncoder& encoder,
                                        std::span<const FeatureMap> views, const SegTTOConfig& cfg) {
  if (views.empty()) throw ArgumentError("run_textual_tuning: no selected views");
  TuningOutcome out;
  if (cfg.total_steps() == 0) {
    out.bank = std::move(bank);
    return out;
  }
  const std::vector<bool> mask = tuned_mask(bank, cfg.tuned_component);
  const int joint = std::min(cfg.entropy_steps, cfg.ce_steps);
  const int solo = std::max(cfg.entropy_steps, cfg.ce_steps) - joint;
  const bool solo_entropy = cfg.entropy_steps > cfg.ce_steps;

  out.trace.initial_ssl = combined_ssl(bank, encoder, views, cfg);
  auto check = [&](double v, const char* name) {
    if (!std::isfinite(v))
      throw TuningAborted(std::string("non-finite ") + name + " loss during tuning", out.trace);
  };
  check(*out.trace.initial_ssl, "initial");

  for (int step = 0; step < joint + solo; ++step) {
    const bool is_joint = step < joint;
    const bool use_entropy = is_joint || solo_entropy;
    const bool use_ce = is_joint || !solo_entropy;
    const TextGrid text = compose_text_features(bank, encoder);

    std::optional<BankLossGradient> ent, ce;
    if (use_entropy) {
      ent = bank_loss_and_gradient(bank, encoder, views, cfg, LossKind::kEntropy);
      check(ent->value, "entropy");
    }
    if (use_ce) {
      const auto labels = current_pseudo_labels(text, views, cfg);
      ce = bank_loss_and_gradient(bank, encoder, views, cfg, LossKind::kCrossEntropy, labels);
      check(ce->value, "ce");
    }
    const Vec grad = is_joint ? pcgrad_combine(ent->grad, ce->grad) : (ent ? ent->grad : ce->grad);

    Vec params = bank.flatten();
    const double update = adamw_step(params, grad, mask, bank.optimizer, cfg);
    bank.unflatten(params);
    if (ent) out.trace.steps.push_back({step, "entropy", ent->value, update});
    if (ce) out.trace.steps.push_back({step, "ce", ce->value, update});
  }
  out.trace.final_ssl = combined_ssl(bank, encoder, views, cfg);
  check(*out.trace.final_ssl, "final");
  out.bank = std::move(bank);
  return out;
}

}  // namespace segtto
