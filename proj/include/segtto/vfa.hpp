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

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "segtto/core.hpp"
#include "segtto/error.hpp"
#include "segtto/tensor.hpp"

namespace segtto {

/// Original-resolution accumulator for visual features plus the number of
/// times each pixel has been written.
struct FeatureCanvas {
  Tensor3 accum;
  std::vector<int> counts;

  int rows() const { return accum.rows; }
  int cols() const { return accum.cols; }
  int& count(int r, int c) { return counts[static_cast<std::size_t>(r) * accum.cols + c]; }
  int count(int r, int c) const { return counts[static_cast<std::size_t>(r) * accum.cols + c]; }
};

/// Called after each view is pasted, with the covered box and the resampled
/// features written into it. Baseline adapters use it to mirror the update
/// into their own feature stores.
using FeatureUpdateHook = std::function<void(const ViewGeometry& region, const Tensor3& features)>;

inline FeatureCanvas init_canvas(const FeatureMap& orig, std::pair<int, int> image_size) {
  orig.validate();
  const auto [rows, cols] = image_size;
  if (!orig.geometry.full_cover() || orig.geometry.image_rows != rows || orig.geometry.image_cols != cols)
    throw ArgumentError("init_canvas: original features must cover the full image");
  FeatureCanvas canvas{resize_bilinear(orig.values, rows, cols), std::vector<int>(static_cast<std::size_t>(rows) * cols, 1)};
  return canvas;
}

/// Resamples the view's features to its crop box, undoes a horizontal
/// flip, and adds them into the canvas.
inline void accumulate_view(FeatureCanvas& canvas, const FeatureMap& view, const FeatureUpdateHook& hook = {}) {
  const ViewGeometry& g = view.geometry;
  if (!g.valid() || g.image_rows != canvas.rows() || g.image_cols != canvas.cols())
    throw ArgumentError("accumulate_view: view geometry outside the canvas");
  if (view.depth() != canvas.accum.channels) throw ArgumentError("accumulate_view: channel depth mismatch");
  Tensor3 patch = resize_bilinear(view.values, g.height(), g.width());
  if (g.hflip) patch = flip_horizontal(patch);
  for (int r = 0; r < g.height(); ++r)
    for (int c = 0; c < g.width(); ++c) {
      auto src = patch.pixel(r, c);
      auto dst = canvas.accum.pixel(g.h1 + r, g.w1 + c);
      for (std::size_t ch = 0; ch < src.size(); ++ch) dst[ch] += src[ch];
      ++canvas.count(g.h1 + r, g.w1 + c);
    }
  if (hook) hook(g, patch);
}

/// Count-normalizes the canvas and resamples it to the feature grid.
inline FeatureMap finalize_canvas(const FeatureCanvas& canvas, std::pair<int, int> target) {
  Tensor3 mean(canvas.rows(), canvas.cols(), canvas.accum.channels);
  for (int r = 0; r < canvas.rows(); ++r)
    for (int c = 0; c < canvas.cols(); ++c) {
      const int n = canvas.count(r, c);
      if (n < 1) throw ContractError("finalize_canvas: pixel never updated");
      auto src = canvas.accum.pixel(r, c);
      auto dst = mean.pixel(r, c);
      for (std::size_t ch = 0; ch < src.size(); ++ch) dst[ch] = src[ch] / n;
    }
  return {resize_bilinear(mean, target.first, target.second), ViewGeometry::full(canvas.rows(), canvas.cols())};
}

/// Pastes every selected view onto the upsampled original features in
/// list order and returns the normalized result on the target grid. With
/// no views the original features come back untouched.
inline FeatureMap aggregate_visual(const FeatureMap& orig, std::span<const FeatureMap> views,
                                   std::pair<int, int> image_size, std::pair<int, int> target,
                                   const FeatureUpdateHook& hook = {}, FeatureCanvas* canvas_out = nullptr) {
  if (views.empty() && target == std::pair{orig.rows(), orig.cols()} && canvas_out == nullptr) {
    orig.validate();
    return orig;
  }
  FeatureCanvas canvas = init_canvas(orig, image_size);
  for (const auto& v : views) accumulate_view(canvas, v, hook);
  FeatureMap out = finalize_canvas(canvas, target);
  if (canvas_out) *canvas_out = std::move(canvas);
  return out;
}

}  // namespace segtto
