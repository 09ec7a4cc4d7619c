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

#include <chrono>
#include <functional>
#include <numeric>
#include <type_traits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "segtto/attributes.hpp"
#include "segtto/backend.hpp"
#include "segtto/config.hpp"
#include "segtto/core.hpp"
#include "segtto/error.hpp"
#include "segtto/objective.hpp"
#include "segtto/templates.hpp"
#include "segtto/tuning.hpp"
#include "segtto/vfa.hpp"
#include "segtto/views.hpp"

namespace segtto {

/// Everything needed to segment one image. Backends are borrowed and must
/// outlive the job.
struct SegmentationJob {
  ImageTensor image;
  CategoryVocabulary vocab;
  SegTTOConfig cfg;
  const ImageEncoder* image_encoder = nullptr;
  const TextEncoder* text_encoder = nullptr;
  const Decoder* decoder = nullptr;
  /// One embedded attribute set per category; unused when attribute_mode
  /// is none.
  std::vector<AttributeSet> attributes;
  bool fallback_baseline = false;
  FeatureUpdateHook on_feature_update;
  /// Keep the generated views, per-view selection losses and the VFA canvas
  /// in the result for debug dumps.
  bool keep_debug = false;
};

struct StageTiming {
  std::string stage;
  double milliseconds = 0.0;
};

struct SegmentationResult {
  SegmentationMask mask;
  std::vector<TextEmbedding> text_bank;
  FeatureMap visual;
  TuningTrace trace;
  SelectionResult selection;
  std::vector<StageTiming> timings;
  bool degraded = false;
  std::string degraded_reason;

  // Populated only with keep_debug.
  std::optional<ViewBatch> views;
  std::vector<LossMap> selection_losses;
  std::optional<FeatureCanvas> canvas;
};

/// The prompt strings actually tuned: the configured prompts first, then
/// ImageNet templates not already listed, truncated to prompt_count.
inline std::vector<std::string> resolve_prompts(const SegTTOConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& p : cfg.prompts) {
    if (static_cast<int>(out.size()) == cfg.prompt_count) break;
    out.push_back(p);
  }
  for (const auto& t : imagenet_templates()) {
    if (static_cast<int>(out.size()) >= cfg.prompt_count) break;
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  return out;
}

/// Seed of the augmentation stream for one image; independent of the order
/// images are processed in.
inline std::int64_t view_seed(const SegTTOConfig& cfg, const std::string& source_id) {
  return static_cast<std::int64_t>(hash_combine(static_cast<std::uint64_t>(cfg.rng_seed), fnv1a64(source_id)) >> 1);
}

/// Fetches (or reads from cache) and embeds attributes for every category.
inline std::vector<AttributeSet> prepare_attributes(const CategoryVocabulary& vocab, AttributeCache& cache,
                                                    LlmClient* client, const std::string& dataset,
                                                    const TextEncoder& encoder, std::size_t cap = 15) {
  std::vector<AttributeSet> out;
  for (std::size_t j = 0; j < vocab.size(); ++j)
    out.push_back(fetch_attributes(build_llm_prompt(vocab, j), client, cache, dataset, encoder, cap));
  return out;
}

namespace detail {

inline void check_job(const SegmentationJob& job) {
  if (!job.image_encoder || !job.text_encoder || !job.decoder)
    throw ArgumentError("segmentation job is missing a backend");
  job.vocab.validate();
}

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& sink) : sink_(sink) {}

  template <typename F>
  auto run(const char* stage, F&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto finish = [&] {
      sink_.push_back({stage, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()});
    };
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        finish();
      } else {
        auto r = fn();
        finish();
        return r;
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what());
    }
  }

 private:
  std::vector<StageTiming>& sink_;
};

/// Decodes against text embeddings extended with one entry per attribute;
/// a pixel's label is the category owning the best match.
inline SegmentationMask decode_with_attribute_categories(const Decoder& decoder, const FeatureMap& visual,
                                                         const std::vector<TextEmbedding>& bank,
                                                         const std::vector<AttributeSet>& attrs) {
  std::vector<TextEmbedding> extended = bank;
  std::vector<int> owner(bank.size());
  std::iota(owner.begin(), owner.end(), 0);
  for (std::size_t j = 0; j < attrs.size(); ++j)
    for (std::size_t r = 0; r < attrs[j].embeddings.size(); ++r) {
      extended.push_back({attrs[j].embeddings[r], attrs[j].attributes[r], true});
      owner.push_back(static_cast<int>(j));
    }
  SegmentationMask mask = decoder.decode(visual, extended);
  for (auto& l : mask.labels) l = owner[l];
  return mask;
}

}  // namespace detail

/// Untuned decode: original features against the prompt-mean text features.
inline SegmentationResult baseline_segment(const SegmentationJob& job) {
  detail::check_job(job);
  SegmentationResult res;
  detail::StageClock clock(res.timings);
  const SegTTOConfig cfg = validate_config(job.cfg);
  res.visual = clock.run("encode", [&] { return encode_image(*job.image_encoder, job.image); });
  clock.run("text", [&] {
    const PromptBank bank = make_prompt_bank(*job.text_encoder, resolve_prompts(cfg), job.vocab);
    for (const auto& row : compose_text_features(bank, *job.text_encoder)) res.text_bank.push_back(prompt_mean(row));
  });
  res.mask = clock.run("decode", [&] { return job.decoder->decode(res.visual, res.text_bank); });
  return res;
}

namespace detail {

inline SegmentationResult segment_image_impl(const SegmentationJob& job) {
  check_job(job);
  SegmentationResult res;
  StageClock clock(res.timings);
  const SegTTOConfig cfg = clock.run("config", [&] { return validate_config(job.cfg); });
  const TextEncoder& text_encoder = *job.text_encoder;
  const int rows = job.image.rows();
  const int cols = job.image.cols();

  // (1) original image
  const FeatureMap orig = clock.run("encode", [&] { return encode_image(*job.image_encoder, job.image); });

  // (2) augmented views, encoded once and reused by every later stage
  ViewBatch batch;
  std::vector<FeatureMap> view_feats;
  std::vector<FeatureMap> view_text_space;
  clock.run("views", [&] {
    batch = generate_views(job.image, cfg.view_count, view_seed(cfg, job.image.source_id),
                           AugmentationParams::from_config(cfg), job.image_encoder->input_resolution(rows, cols));
    for (const auto& v : batch.views) {
      FeatureMap f = encode_image(*job.image_encoder, v.image);
      f.geometry = v.geometry;
      view_text_space.push_back(job.decoder->to_text_space(f));
      view_feats.push_back(std::move(f));
    }
  });

  // (3) score and keep the lowest-loss views
  PromptBank bank;
  clock.run("selection", [&] {
    bank = make_prompt_bank(text_encoder, resolve_prompts(cfg), job.vocab);
    const TextGrid text = compose_text_features(bank, text_encoder);
    std::vector<LossMap> losses;
    for (std::size_t i = 0; i < view_text_space.size(); ++i)
      losses.push_back(
          selection_loss_map(probability_map(view_text_space[i], text, cfg.temperature, static_cast<int>(i)), cfg));
    const auto scores = score_views(losses, cfg.aggregation_mode);
    res.selection = select_views(scores, cfg.retention_fraction);
    if (job.keep_debug) res.selection_losses = std::move(losses);
  });
  std::vector<FeatureMap> selected_feats;
  std::vector<FeatureMap> selected_text_space;
  for (int i : res.selection.kept_indices) {
    selected_feats.push_back(view_feats[i]);
    selected_text_space.push_back(view_text_space[i]);
  }

  // (4) textual feature tuning on the selected views
  clock.run("tuning", [&] {
    auto outcome = run_textual_tuning(reset_bank(std::move(bank)), text_encoder, selected_text_space, cfg);
    bank = std::move(outcome.bank);
    res.trace = std::move(outcome.trace);
  });

  // (5) final text features, mixed with category attributes
  clock.run("attributes", [&] {
    const TextGrid tuned = compose_text_features(bank, text_encoder);
    if (cfg.attribute_mode == AttributeMode::kPreAggregation && job.attributes.size() != tuned.size())
      throw ArgumentError("attribute mode needs one attribute set per category");
    for (std::size_t j = 0; j < tuned.size(); ++j) {
      if (cfg.attribute_mode == AttributeMode::kPreAggregation) {
        const Vec ref = category_reference(tuned[j]);
        const Vec attr = aggregate_attributes(weight_attributes(job.attributes[j], ref));
        res.text_bank.push_back(mix_text_embedding(tuned[j], attr, cfg.mix_beta));
      } else {
        res.text_bank.push_back(prompt_mean(tuned[j]));
      }
    }
  });

  // (6) visual feature aggregation over the selected views
  res.visual = clock.run("vfa", [&] {
    if (!cfg.visual_aggregation) return orig;
    if (!job.keep_debug)
      return aggregate_visual(orig, selected_feats, {rows, cols}, {orig.rows(), orig.cols()}, job.on_feature_update);
    FeatureCanvas canvas;
    FeatureMap out = aggregate_visual(orig, selected_feats, {rows, cols}, {orig.rows(), orig.cols()},
                                      job.on_feature_update, &canvas);
    res.canvas = std::move(canvas);
    return out;
  });

  // (7) Y = D(f_v, F_t)
  res.mask = clock.run("decode", [&] {
    if (cfg.attribute_mode == AttributeMode::kPostAggregation) {
      if (job.attributes.size() != job.vocab.size())
        throw ArgumentError("attribute mode needs one attribute set per category");
      return decode_with_attribute_categories(*job.decoder, res.visual, res.text_bank, job.attributes);
    }
    return job.decoder->decode(res.visual, res.text_bank);
  });
  if (job.keep_debug) res.views = std::move(batch);
  return res;
}

}  // namespace detail

/// Full per-image loop: encode, augment, select, tune, mix attributes,
/// aggregate visual features, decode. A stage failure raises StageError,
/// or falls back to the untuned decode (flagged degraded) when the job
/// allows it.
inline SegmentationResult segment_image(const SegmentationJob& job) {
  try {
    return detail::segment_image_impl(job);
  } catch (const StageError& e) {
    if (!job.fallback_baseline) throw;
    SegmentationResult res = baseline_segment(job);
    res.degraded = true;
    res.degraded_reason = e.what();
    return res;
  }
}

}  // namespace segtto
