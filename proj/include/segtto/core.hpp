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
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "segtto/error.hpp"
#include "segtto/tensor.hpp"

namespace segtto {

/// RGB image with values in [0, 1], stored as a rows x cols x 3 tensor.
struct ImageTensor {
  Tensor3 pixels;
  std::string source_id;

  int rows() const { return pixels.rows; }
  int cols() const { return pixels.cols; }

  void validate() const {
    if (pixels.rows < 1 || pixels.cols < 1)
      throw EncoderError(source_id, "image must be at least 1x1");
    if (pixels.channels != 3) throw EncoderError(source_id, "image must have 3 channels");
    for (double v : pixels.data)
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw EncoderError(source_id, "pixel values must be finite and in [0,1]");
  }
};

/// Box of the original image covered by a view, in pixel coordinates with
/// exclusive upper bounds.
struct ViewGeometry {
  int h1 = 0;
  int w1 = 0;
  int h2 = 0;
  int w2 = 0;
  bool hflip = false;
  int image_rows = 0;
  int image_cols = 0;

  static ViewGeometry full(int rows, int cols) { return {0, 0, rows, cols, false, rows, cols}; }

  int height() const { return h2 - h1; }
  int width() const { return w2 - w1; }
  bool valid() const {
    return image_rows >= 1 && image_cols >= 1 && 0 <= h1 && h1 < h2 && h2 <= image_rows &&
           0 <= w1 && w1 < w2 && w2 <= image_cols;
  }
  bool full_cover() const { return h1 == 0 && w1 == 0 && h2 == image_rows && w2 == image_cols; }
  bool operator==(const ViewGeometry&) const = default;
};

/// Dense visual features for one image or view.
struct FeatureMap {
  Tensor3 values;
  ViewGeometry geometry;

  int rows() const { return values.rows; }
  int cols() const { return values.cols; }
  int depth() const { return values.channels; }

  void validate() const {
    if (values.rows < 1 || values.cols < 1 || values.channels < 1)
      throw ArgumentError("feature map must be non-empty");
    if (!values.all_finite()) throw NumericError("feature map contains non-finite values");
    if (!geometry.valid()) throw ArgumentError("feature map geometry outside the image");
  }
  bool operator==(const FeatureMap&) const = default;
};

struct TextEmbedding {
  Vec values;
  std::string label;
  bool normalized = false;

  std::size_t dim() const { return values.size(); }
  bool operator==(const TextEmbedding&) const = default;
};

/// Ordered category names with optional replacement descriptions used when
/// prompting for attributes.
struct CategoryVocabulary {
  std::vector<std::string> names;
  std::vector<std::optional<std::string>> descriptions;
  std::string image_type = "photo";

  CategoryVocabulary() = default;
  explicit CategoryVocabulary(std::vector<std::string> n, std::string type = "photo")
      : names(std::move(n)), descriptions(names.size()), image_type(std::move(type)) {
    validate();
  }

  std::size_t size() const { return names.size(); }

  /// Description when present, the bare name otherwise.
  const std::string& display_name(std::size_t j) const {
    if (j < descriptions.size() && descriptions[j]) return *descriptions[j];
    return names.at(j);
  }

  void validate() const {
    if (names.empty()) throw ArgumentError("vocabulary must contain at least one category");
    if (!descriptions.empty() && descriptions.size() != names.size())
      throw ArgumentError("vocabulary descriptions must align with names");
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
      if (n.empty()) throw ArgumentError("vocabulary contains an empty category name");
      if (!seen.insert(n).second) throw ArgumentError("duplicate category name '" + n + "'");
    }
  }
};

struct SegmentationMask {
  int rows = 0;
  int cols = 0;
  std::vector<int> labels;

  SegmentationMask() = default;
  SegmentationMask(int r, int c, int fill = 0)
      : rows(r), cols(c), labels(static_cast<std::size_t>(r) * c, fill) {}

  int& at(int r, int c) { return labels[static_cast<std::size_t>(r) * cols + c]; }
  int at(int r, int c) const { return labels[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const SegmentationMask&) const = default;
};

}  // namespace segtto
