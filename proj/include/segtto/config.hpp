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

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "segtto/error.hpp"

namespace segtto {

enum class AggregationMode { kMean, kMedian, kMax };
enum class PseudoLabelMode { kHard, kSoft };
enum class SelectionLossMode { kFullSsl, kEntropyOnly };
enum class AttributeMode { kPreAggregation, kPostAggregation, kNone };
/// Which embeddings receive gradient updates during textual tuning.
enum class TunedComponent { kPrompts, kClasses, kBoth };

/// Every tunable knob of the test-time optimization loop. Member
/// initializers are the published defaults.
struct SegTTOConfig {
  double temperature = 100.0;
  double mix_beta = 0.5;
  int prompt_count = 5;
  int view_count = 64;
  double retention_fraction = 0.2;
  int entropy_steps = 2;
  int ce_steps = 3;
  double learning_rate = 5e-3;
  AggregationMode aggregation_mode = AggregationMode::kMean;
  PseudoLabelMode pseudo_label_mode = PseudoLabelMode::kHard;
  SelectionLossMode selection_loss_mode = SelectionLossMode::kEntropyOnly;
  AttributeMode attribute_mode = AttributeMode::kPreAggregation;
  std::int64_t rng_seed = 0;

  TunedComponent tuned_component = TunedComponent::kBoth;
  bool visual_aggregation = true;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double crop_area_min = 0.3;
  double crop_area_max = 1.0;
  double crop_aspect_min = 3.0 / 4.0;
  double crop_aspect_max = 4.0 / 3.0;
  double flip_probability = 0.5;
  int attribute_cap = 15;
  /// Prompt initializations, in order; the first prompt_count are used and
  /// the remainder is drawn from the ImageNet template pool.
  std::vector<std::string> prompts = {"a photo of a", "a close-up photo of a",
                                      "a bright photo of the", "a cropped photo of a",
                                      "a dark photo of the"};

  /// Total number of optimizer loss evaluations recorded per image.
  int total_steps() const { return entropy_steps + ce_steps; }

  bool operator==(const SegTTOConfig&) const = default;
};

inline const char* to_string(AggregationMode m) {
  switch (m) {
    case AggregationMode::kMean: return "mean";
    case AggregationMode::kMedian: return "median";
    case AggregationMode::kMax: return "max";
  }
  return "?";
}
inline const char* to_string(PseudoLabelMode m) {
  return m == PseudoLabelMode::kHard ? "hard" : "soft";
}
inline const char* to_string(SelectionLossMode m) {
  return m == SelectionLossMode::kFullSsl ? "full_ssl" : "entropy_only";
}
inline const char* to_string(AttributeMode m) {
  switch (m) {
    case AttributeMode::kPreAggregation: return "pre_aggregation";
    case AttributeMode::kPostAggregation: return "post_aggregation";
    case AttributeMode::kNone: return "none";
  }
  return "?";
}
inline const char* to_string(TunedComponent m) {
  switch (m) {
    case TunedComponent::kPrompts: return "prompts";
    case TunedComponent::kClasses: return "classes";
    case TunedComponent::kBoth: return "both";
  }
  return "?";
}

/// Checks every field invariant and returns the config unchanged; throws
/// ValidationError naming the first bad field.
inline SegTTOConfig validate_config(const SegTTOConfig& cfg) {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw ValidationError(field, what);
  };
  require(cfg.temperature > 0.0 && std::isfinite(cfg.temperature), "temperature", "must be positive");
  require(cfg.mix_beta >= 0.0 && cfg.mix_beta <= 1.0, "mix_beta", "must lie in [0,1]");
  require(cfg.prompt_count >= 1, "prompt_count", "must be >= 1");
  require(cfg.view_count >= 1, "view_count", "must be >= 1");
  require(cfg.retention_fraction > 0.0 && cfg.retention_fraction <= 1.0, "retention_fraction",
          "must lie in (0,1]");
  require(cfg.entropy_steps >= 0, "entropy_steps", "must be >= 0");
  require(cfg.ce_steps >= 0, "ce_steps", "must be >= 0");
  require(cfg.learning_rate > 0.0 && std::isfinite(cfg.learning_rate), "learning_rate",
          "must be positive");
  require(cfg.weight_decay >= 0.0, "weight_decay", "must be >= 0");
  require(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0, "adam_beta1", "must lie in [0,1)");
  require(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0, "adam_beta2", "must lie in [0,1)");
  require(cfg.adam_epsilon > 0.0, "adam_epsilon", "must be positive");
  require(cfg.crop_area_min > 0.0 && cfg.crop_area_min <= cfg.crop_area_max &&
              cfg.crop_area_max <= 1.0,
          "crop_area_min", "need 0 < crop_area_min <= crop_area_max <= 1");
  require(cfg.crop_aspect_min > 0.0 && cfg.crop_aspect_min <= cfg.crop_aspect_max,
          "crop_aspect_min", "need 0 < crop_aspect_min <= crop_aspect_max");
  require(cfg.flip_probability >= 0.0 && cfg.flip_probability <= 1.0, "flip_probability",
          "must lie in [0,1]");
  require(cfg.attribute_cap >= 1, "attribute_cap", "must be >= 1");
  for (const auto& p : cfg.prompts) require(!p.empty(), "prompts", "prompt strings must be non-empty");
  return cfg;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) throw ValidationError(key, "cannot parse '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError(key, "expected boolean, got '" + v + "'");
}

template <typename E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<E> options) {
  for (E e : options)
    if (v == to_string(e)) return e;
  throw ValidationError(key, "unknown option '" + v + "'");
}

}  // namespace detail

/// Flat key/value view of a config, in a fixed field order.
inline std::vector<std::pair<std::string, std::string>> config_to_pairs(const SegTTOConfig& c) {
  using detail::format_double;
  std::string prompts;
  for (std::size_t i = 0; i < c.prompts.size(); ++i) prompts += (i ? "|" : "") + c.prompts[i];
  return {
      {"temperature", format_double(c.temperature)},
      {"mix_beta", format_double(c.mix_beta)},
      {"prompt_count", std::to_string(c.prompt_count)},
      {"view_count", std::to_string(c.view_count)},
      {"retention_fraction", format_double(c.retention_fraction)},
      {"entropy_steps", std::to_string(c.entropy_steps)},
      {"ce_steps", std::to_string(c.ce_steps)},
      {"learning_rate", format_double(c.learning_rate)},
      {"aggregation_mode", to_string(c.aggregation_mode)},
      {"pseudo_label_mode", to_string(c.pseudo_label_mode)},
      {"selection_loss_mode", to_string(c.selection_loss_mode)},
      {"attribute_mode", to_string(c.attribute_mode)},
      {"rng_seed", std::to_string(c.rng_seed)},
      {"tuned_component", to_string(c.tuned_component)},
      {"visual_aggregation", c.visual_aggregation ? "true" : "false"},
      {"weight_decay", format_double(c.weight_decay)},
      {"adam_beta1", format_double(c.adam_beta1)},
      {"adam_beta2", format_double(c.adam_beta2)},
      {"adam_epsilon", format_double(c.adam_epsilon)},
      {"crop_area_min", format_double(c.crop_area_min)},
      {"crop_area_max", format_double(c.crop_area_max)},
      {"crop_aspect_min", format_double(c.crop_aspect_min)},
      {"crop_aspect_max", format_double(c.crop_aspect_max)},
      {"flip_probability", format_double(c.flip_probability)},
      {"attribute_cap", std::to_string(c.attribute_cap)},
      {"prompts", prompts},
  };
}

/// Applies one `key = value` override onto cfg.
inline void apply_config_field(SegTTOConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "temperature") c.temperature = parse_number<double>(key, v);
  else if (key == "mix_beta") c.mix_beta = parse_number<double>(key, v);
  else if (key == "prompt_count") c.prompt_count = parse_number<int>(key, v);
  else if (key == "view_count") c.view_count = parse_number<int>(key, v);
  else if (key == "retention_fraction") c.retention_fraction = parse_number<double>(key, v);
  else if (key == "entropy_steps") c.entropy_steps = parse_number<int>(key, v);
  else if (key == "ce_steps") c.ce_steps = parse_number<int>(key, v);
  else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, v);
  else if (key == "aggregation_mode")
    c.aggregation_mode = parse_enum(key, v, {AggregationMode::kMean, AggregationMode::kMedian, AggregationMode::kMax});
  else if (key == "pseudo_label_mode")
    c.pseudo_label_mode = parse_enum(key, v, {PseudoLabelMode::kHard, PseudoLabelMode::kSoft});
  else if (key == "selection_loss_mode")
    c.selection_loss_mode = parse_enum(key, v, {SelectionLossMode::kFullSsl, SelectionLossMode::kEntropyOnly});
  else if (key == "attribute_mode")
    c.attribute_mode = parse_enum(
        key, v, {AttributeMode::kPreAggregation, AttributeMode::kPostAggregation, AttributeMode::kNone});
  else if (key == "rng_seed") c.rng_seed = parse_number<std::int64_t>(key, v);
  else if (key == "tuned_component")
    c.tuned_component = parse_enum(key, v, {TunedComponent::kPrompts, TunedComponent::kClasses, TunedComponent::kBoth});
  else if (key == "visual_aggregation") c.visual_aggregation = parse_bool(key, v);
  else if (key == "weight_decay") c.weight_decay = parse_number<double>(key, v);
  else if (key == "adam_beta1") c.adam_beta1 = parse_number<double>(key, v);
  else if (key == "adam_beta2") c.adam_beta2 = parse_number<double>(key, v);
  else if (key == "adam_epsilon") c.adam_epsilon = parse_number<double>(key, v);
  else if (key == "crop_area_min") c.crop_area_min = parse_number<double>(key, v);
  else if (key == "crop_area_max") c.crop_area_max = parse_number<double>(key, v);
  else if (key == "crop_aspect_min") c.crop_aspect_min = parse_number<double>(key, v);
  else if (key == "crop_aspect_max") c.crop_aspect_max = parse_number<double>(key, v);
  else if (key == "flip_probability") c.flip_probability = parse_number<double>(key, v);
  else if (key == "attribute_cap") c.attribute_cap = parse_number<int>(key, v);
  else if (key == "prompts") {
    c.prompts.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, '|')) c.prompts.push_back(trim(item));
  } else {
    throw ValidationError(key, "unknown config key");
  }
}

/// Parses `key = value` lines; `#` starts a comment line. Unset keys keep
/// their defaults and the result is validated.
inline SegTTOConfig parse_config(std::istream& in, SegTTOConfig base = {}) {
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ValidationError(t, "expected 'key = value'");
    apply_config_field(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return validate_config(base);
}

inline SegTTOConfig parse_config_string(const std::string& text, SegTTOConfig base = {}) {
  std::istringstream in(text);
  return parse_config(in, std::move(base));
}

inline SegTTOConfig load_config_file(const std::string& path, SegTTOConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file '" + path + "'");
  return parse_config(in, std::move(base));
}

inline std::string format_config(const SegTTOConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_to_pairs(c)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace segtto
