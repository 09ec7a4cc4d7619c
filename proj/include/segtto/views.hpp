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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "segtto/config.hpp"
#include "segtto/core.hpp"
#include "segtto/error.hpp"
#include "segtto/objective.hpp"

namespace segtto {

struct View {
  ImageTensor image;
  ViewGeometry geometry;
};

struct ViewBatch {
  std::vector<View> views;
  std::int64_t rng_seed = 0;
};

/// Random-resized-crop parameters. Aspect ratios are relative to the
/// source image's own aspect, so 1.0 keeps its shape.
struct AugmentationParams {
  double area_min = 0.3;
  double area_max = 1.0;
  double aspect_min = 3.0 / 4.0;
  double aspect_max = 4.0 / 3.0;
  double flip_probability = 0.5;
  int max_retries = 100;

  static AugmentationParams from_config(const SegTTOConfig& cfg) {
    return {cfg.crop_area_min, cfg.crop_area_max, cfg.crop_aspect_min, cfg.crop_aspect_max,
            cfg.flip_probability};
  }
};

namespace detail {

// Portable uniform draw in [0, 1).
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
}

}  // namespace detail

/// Draws m seeded random resized crops (optionally flipped), each resized
/// to `resolution`. Crops under 2x2 pixels are redrawn.
inline ViewBatch generate_views(const ImageTensor& image, int m, std::int64_t seed,
                                const AugmentationParams& params = {},
                                std::pair<int, int> resolution = {0, 0}) {
  if (m < 1) throw ArgumentError("generate_views: m must be >= 1");
  image.validate();
  const int rows = image.rows();
  const int cols = image.cols();
  const int out_rows = resolution.first > 0 ? resolution.first : rows;
  const int out_cols = resolution.second > 0 ? resolution.second : cols;
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  const double log_lo = std::log(params.aspect_min);
  const double log_hi = std::log(params.aspect_max);

  ViewBatch batch;
  batch.rng_seed = seed;
  batch.views.reserve(m);
  for (int i = 0; i < m; ++i) {
    ViewGeometry g;
    bool ok = false;
    for (int attempt = 0; attempt < params.max_retries && !ok; ++attempt) {
      const double area = params.area_min + (params.area_max - params.area_min) * detail::uniform01(rng);
      const double ratio = std::exp(log_lo + (log_hi - log_lo) * detail::uniform01(rng));
      const int h = std::min(rows, static_cast<int>(std::lround(rows * std::sqrt(area / ratio))));
      const int w = std::min(cols, static_cast<int>(std::lround(cols * std::sqrt(area * ratio))));
      if (h < 2 || w < 2) continue;
      const int top = detail::uniform_int(rng, 0, rows - h);
      const int left = detail::uniform_int(rng, 0, cols - w);
      g = {top, left, top + h, left + w, false, rows, cols};
      ok = true;
    }
    if (!ok) throw ArgumentError("generate_views: could not draw a crop of at least 2x2 pixels");
    g.hflip = params.flip_probability > 0.0 && detail::uniform01(rng) < params.flip_probability;

    Tensor3 px = crop(image.pixels, g.h1, g.w1, g.h2, g.w2);
    if (g.hflip) px = flip_horizontal(px);
    px = resize_bilinear(px, out_rows, out_cols);
    batch.views.push_back({ImageTensor{std::move(px), image.source_id + "#view" + std::to_string(i)}, g});
  }
  return batch;
}

/// Spatially aggregated loss per view.
inline std::vector<double> score_views(std::span<const LossMap> loss_per_view, AggregationMode mode) {
  if (loss_per_view.empty()) throw ArgumentError("score_views: no views");
  std::vector<double> scores;
  scores.reserve(loss_per_view.size());
  for (const auto& lm : loss_per_view) scores.push_back(spatial_aggregate(lm, mode));
  return scores;
}

/// Loss map used to rank one view: pure entropy, or entropy plus the
/// pseudo-label cross-entropy of the same view in full_ssl mode.
inline LossMap selection_loss_map(const ProbabilityMap& pm, const SegTTOConfig& cfg) {
  LossMap ent = entropy_map(pm);
  if (cfg.selection_loss_mode == SelectionLossMode::kEntropyOnly) return ent;
  const LossMap ce = cross_entropy_map(pm, pseudo_labels(pm, cfg.pseudo_label_mode));
  for (std::size_t q = 0; q < ent.values.size(); ++q) ent.values[q] += ce.values[q];
  return ent;
}

struct SelectionResult {
  std::vector<int> kept_indices;
  std::vector<double> per_view_score;
};

inline int retained_count(int m, double retention_fraction) {
  return std::max(1, static_cast<int>(std::floor(retention_fraction * m)));
}

/// Keeps the max(1, floor(fraction * m)) lowest-scoring views, ties to the
/// lower index. Non-finite scores never survive.
inline SelectionResult select_views(std::span<const double> scores, double retention_fraction) {
  if (scores.empty()) throw ArgumentError("select_views: no scores");
  if (!(retention_fraction > 0.0 && retention_fraction <= 1.0))
    throw ArgumentError("select_views: retention fraction must lie in (0,1]");
  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(scores.size()); ++i)
    if (std::isfinite(scores[i])) order.push_back(i);
  if (order.empty()) throw SelectionError("select_views: every view score is non-finite");
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] < scores[b]; });
  const int keep = std::min<int>(retained_count(static_cast<int>(scores.size()), retention_fraction),
                                 static_cast<int>(order.size()));
  SelectionResult out;
  out.kept_indices.assign(order.begin(), order.begin() + keep);
  std::sort(out.kept_indices.begin(), out.kept_indices.end());
  out.per_view_score.assign(scores.begin(), scores.end());
  return out;
}

}  // namespace segtto
