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

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "segtto/core.hpp"
#include "segtto/error.hpp"
#include "segtto/tensor.hpp"

namespace segtto {

/// Sequence of token embeddings fed to a text encoder.
using TokenSequence = std::vector<Vec>;

/// Image encoder E_v. Implementations must be deterministic per instance.
class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;

  /// Features for the whole input image; geometry covers the input.
  virtual FeatureMap encode(const ImageTensor& image) const = 0;

  /// Resolution every augmented view is resized to before encoding.
  virtual std::pair<int, int> input_resolution(int rows, int cols) const { return {rows, cols}; }

  /// False when the backend must not be called from several threads at once.
  virtual bool concurrent_safe() const { return true; }
};

/// Differentiable text encoder E_t. Text is first mapped to token
/// embeddings, which is the space learnable prompts live in.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;

  virtual std::size_t dim() const = 0;
  virtual std::size_t token_dim() const = 0;

  /// Tokenizes and looks up token embeddings. Empty text yields no tokens.
  virtual TokenSequence embed_tokens(std::string_view text) const = 0;

  virtual Vec encode_tokens(const TokenSequence& tokens) const = 0;

  /// Vector-Jacobian product: gradient of a scalar w.r.t. each token
  /// embedding given its gradient w.r.t. encode_tokens(tokens).
  virtual TokenSequence backward(const TokenSequence& tokens, std::span<const double> grad_out) const = 0;

  /// Whether encode_tokens returns unit-norm vectors.
  virtual bool produces_normalized() const { return false; }

  virtual bool concurrent_safe() const { return true; }
};

/// Segmentation decoder D.
class Decoder {
 public:
  virtual ~Decoder() = default;

  /// Maps visual features into the text embedding space the objective
  /// compares against.
  virtual FeatureMap to_text_space(const FeatureMap& visual) const = 0;

  virtual SegmentationMask decode(const FeatureMap& visual, std::span<const TextEmbedding> text_bank) const = 0;

  virtual bool concurrent_safe() const { return true; }
};

/// Runs an image encoder under the contract: input validated, foreign
/// exceptions wrapped with the image id, output shape checked.
inline FeatureMap encode_image(const ImageEncoder& encoder, const ImageTensor& image) {
  image.validate();
  FeatureMap out;
  try {
    out = encoder.encode(image);
  } catch (const EncoderError&) {
    throw;
  } catch (const std::exception& e) {
    throw EncoderError(image.source_id, e.what());
  }
  if (out.rows() < 1 || out.cols() < 1 || out.depth() < 1 || !out.values.all_finite())
    throw EncoderError(image.source_id, "encoder produced an empty or non-finite feature map");
  if (!out.geometry.full_cover() || out.geometry.image_rows != image.rows() ||
      out.geometry.image_cols != image.cols())
    throw EncoderError(image.source_id, "encoder output geometry must cover the input");
  return out;
}

inline TextEmbedding encode_text(const TextEncoder& encoder, const std::string& text) {
  if (text.empty()) throw ArgumentError("text encoder input must be non-empty");
  TextEmbedding e{encoder.encode_tokens(encoder.embed_tokens(text)), text, encoder.produces_normalized()};
  if (e.values.size() != encoder.dim())
    throw ContractError("text encoder returned wrong dimension for '" + text + "'");
  for (double v : e.values)
    if (!std::isfinite(v)) throw NumericError("text encoder returned non-finite values for '" + text + "'");
  return e;
}

/// Cosine-argmax decoder in a shared embedding space. Features are
/// bilinearly upsampled to the image size covered by their geometry,
/// optionally projected by a linear map, and each pixel takes the most
/// similar text embedding (lowest index on ties).
class ReferenceDecoder : public Decoder {
 public:
  ReferenceDecoder() = default;

  /// projection is text_dim x visual_dim, row-major.
  ReferenceDecoder(std::size_t text_dim, std::size_t visual_dim, std::vector<double> projection)
      : text_dim_(text_dim), visual_dim_(visual_dim), projection_(std::move(projection)) {
    if (projection_.size() != text_dim_ * visual_dim_)
      throw ArgumentError("projection size must be text_dim * visual_dim");
  }

  FeatureMap to_text_space(const FeatureMap& visual) const override {
    if (projection_.empty()) return visual;
    if (static_cast<std::size_t>(visual.depth()) != visual_dim_)
      throw ContractError("visual depth does not match the decoder projection");
    FeatureMap out{Tensor3(visual.rows(), visual.cols(), static_cast<int>(text_dim_)), visual.geometry};
    for (int r = 0; r < visual.rows(); ++r)
      for (int c = 0; c < visual.cols(); ++c) {
        auto src = visual.values.pixel(r, c);
        auto dst = out.values.pixel(r, c);
        for (std::size_t i = 0; i < text_dim_; ++i)
          dst[i] = dot(std::span<const double>(projection_.data() + i * visual_dim_, visual_dim_), src);
      }
    return out;
  }

  SegmentationMask decode(const FeatureMap& visual, std::span<const TextEmbedding> text_bank) const override {
    if (text_bank.empty()) throw ArgumentError("decode: empty text bank");
    const FeatureMap projected = to_text_space(visual);
    const std::size_t d = static_cast<std::size_t>(projected.depth());
    std::vector<Vec> unit_text;
    unit_text.reserve(text_bank.size());
    for (const auto& t : text_bank) {
      if (t.values.size() != d) throw ContractError("decode: text dimension does not match visual features");
      const double n = norm(t.values);
      Vec u = t.values;
      if (n > 0.0)
        for (auto& v : u) v /= n;
      unit_text.push_back(std::move(u));
    }
    const int rows = visual.geometry.image_rows;
    const int cols = visual.geometry.image_cols;
    const Tensor3 up = resize_bilinear(projected.values, rows, cols);
    SegmentationMask mask(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        auto px = up.pixel(r, c);
        const double pn = norm(px);
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < unit_text.size(); ++j) {
          const double s = pn > 0.0 ? dot(px, unit_text[j]) / pn : 0.0;
          if (s > best_score) {
            best_score = s;
            best = static_cast<int>(j);
          }
        }
        mask.at(r, c) = best;
      }
    return mask;
  }

 private:
  std::size_t text_dim_ = 0;
  std::size_t visual_dim_ = 0;
  std::vector<double> projection_;
};

}  // namespace segtto
