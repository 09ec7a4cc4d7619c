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

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "segtto/backend.hpp"

// Deterministic hash-seeded backends. They need no model weights, which
// lets every part of the optimization loop be checked against brute force.

namespace segtto {

/// Maps a color to a fixed feature vector. When an oracle image encoder has
/// a lexicon, each pixel takes the anchor of its nearest lexicon color.
struct LexiconEntry {
  std::array<double, 3> rgb{};
  Vec anchor;
};

/// Image encoder over non-overlapping square pixel blocks. Without a
/// lexicon, channel c of a block is a seeded hash of (quantized block mean
/// color, c) mapped into [-1, 1).
class OracleImageEncoder : public ImageEncoder {
 public:
  explicit OracleImageEncoder(int dim, std::uint64_t seed = 0, int block = 4)
      : dim_(dim), seed_(seed), block_(block) {
    if (dim < 1 || block < 1) throw ArgumentError("oracle image encoder: dim and block must be >= 1");
  }

  void set_lexicon(std::vector<LexiconEntry> lexicon) {
    for (const auto& e : lexicon)
      if (e.anchor.size() != static_cast<std::size_t>(dim_))
        throw ArgumentError("oracle lexicon anchor has the wrong dimension");
    lexicon_ = std::move(lexicon);
  }
  const std::vector<LexiconEntry>& lexicon() const { return lexicon_; }

  int dim() const { return dim_; }
  int block() const { return block_; }

  FeatureMap encode(const ImageTensor& image) const override {
    image.validate();
    const int rows = (image.rows() + block_ - 1) / block_;
    const int cols = (image.cols() + block_ - 1) / block_;
    FeatureMap out{Tensor3(rows, cols, dim_), ViewGeometry::full(image.rows(), image.cols())};
    for (int br = 0; br < rows; ++br)
      for (int bc = 0; bc < cols; ++bc) {
        const int r0 = br * block_, r1 = std::min(r0 + block_, image.rows());
        const int c0 = bc * block_, c1 = std::min(c0 + block_, image.cols());
        auto dst = out.values.pixel(br, bc);
        if (lexicon_.empty())
          hash_block(image, r0, r1, c0, c1, dst);
        else
          lexicon_block(image, r0, r1, c0, c1, dst);
      }
    return out;
  }

 private:
  void hash_block(const ImageTensor& image, int r0, int r1, int c0, int c1, std::span<double> dst) const {
    std::array<double, 3> mean{};
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c)
        for (int ch = 0; ch < 3; ++ch) mean[ch] += image.pixels.at(r, c, ch);
    const double count = static_cast<double>((r1 - r0) * (c1 - c0));
    std::uint64_t h = mix64(seed_ ^ 0x1ea9e5ULL);
    for (int ch = 0; ch < 3; ++ch)
      h = hash_combine(h, static_cast<std::uint64_t>(std::llround(mean[ch] / count * 4095.0)));
    for (int ch = 0; ch < dim_; ++ch)
      dst[ch] = hash_to_unit_interval(hash_combine(h, static_cast<std::uint64_t>(ch)));
  }

  void lexicon_block(const ImageTensor& image, int r0, int r1, int c0, int c1, std::span<double> dst) const {
    std::fill(dst.begin(), dst.end(), 0.0);
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t e = 0; e < lexicon_.size(); ++e) {
          double d = 0.0;
          for (int ch = 0; ch < 3; ++ch) {
            const double diff = image.pixels.at(r, c, ch) - lexicon_[e].rgb[ch];
            d += diff * diff;
          }
          if (d < best_d) {
            best_d = d;
            best = e;
          }
        }
        for (int ch = 0; ch < dim_; ++ch) dst[ch] += lexicon_[best].anchor[ch];
      }
    const double count = static_cast<double>((r1 - r0) * (c1 - c0));
    for (auto& v : dst) v /= count;
  }

  int dim_;
  std::uint64_t seed_;
  int block_;
  std::vector<LexiconEntry> lexicon_;
};

/// Splits on whitespace after lower-casing; no vocabulary limit.
inline std::vector<std::string> oracle_tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

/// Text encoder: token t gets a seeded hash embedding e_t; the output is
/// normalize(sum_t tanh(e_t + pos_t)) with a seeded positional offset pos_t.
class OracleTextEncoder : public TextEncoder {
 public:
  explicit OracleTextEncoder(std::size_t dim, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {
    if (dim < 1) throw ArgumentError("oracle text encoder: dim must be >= 1");
  }

  std::size_t dim() const override { return dim_; }
  std::size_t token_dim() const override { return dim_; }
  bool produces_normalized() const override { return true; }

  TokenSequence embed_tokens(std::string_view text) const override {
    TokenSequence out;
    for (const auto& tok : oracle_tokenize(text)) {
      const std::uint64_t h = hash_combine(mix64(seed_ ^ 0x70cea1ULL), fnv1a64(tok));
      Vec e(dim_);
      for (std::size_t i = 0; i < dim_; ++i) e[i] = hash_to_unit_interval(hash_combine(h, i));
      out.push_back(std::move(e));
    }
    return out;
  }

  Vec encode_tokens(const TokenSequence& tokens) const override {
    if (tokens.empty()) throw ArgumentError("oracle text encoder: empty token sequence");
    return normalized(pooled(tokens));
  }

  TokenSequence backward(const TokenSequence& tokens, std::span<const double> grad_out) const override {
    if (grad_out.size() != dim_) throw ArgumentError("oracle text encoder: gradient dimension mismatch");
    const Vec s = pooled(tokens);
    const double sn = norm(s);
    Vec y = s;
    for (auto& v : y) v /= sn;
    const double yg = dot(y, grad_out);
    Vec grad_s(dim_);
    for (std::size_t i = 0; i < dim_; ++i) grad_s[i] = (grad_out[i] - y[i] * yg) / sn;
    TokenSequence grads(tokens.size(), Vec(dim_));
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const Vec pos = position(t);
      for (std::size_t i = 0; i < dim_; ++i) {
        const double th = std::tanh(tokens[t][i] + pos[i]);
        grads[t][i] = grad_s[i] * (1.0 - th * th);
      }
    }
    return grads;
  }

 private:
  Vec position(std::size_t t) const {
    const std::uint64_t h = hash_combine(mix64(seed_ ^ 0x9051ULL), t);
    Vec p(dim_);
    for (std::size_t i = 0; i < dim_; ++i) p[i] = 0.5 * hash_to_unit_interval(hash_combine(h, i));
    return p;
  }

  Vec pooled(const TokenSequence& tokens) const {
    Vec s(dim_, 0.0);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (tokens[t].size() != dim_) throw ArgumentError("oracle text encoder: token dimension mismatch");
      const Vec pos = position(t);
      for (std::size_t i = 0; i < dim_; ++i) s[i] += std::tanh(tokens[t][i] + pos[i]);
    }
    return s;
  }

  std::size_t dim_;
  std::uint64_t seed_;
};

/// Reads `r g b<TAB>category` lines (channel values 0-255) and anchors each
/// color at the supplied embedding of its category.
template <typename AnchorFn>
std::vector<LexiconEntry> parse_oracle_lexicon(std::istream& in, AnchorFn&& anchor_for) {
  std::vector<LexiconEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ArgumentError("oracle lexicon line needs a tab: '" + line + "'");
    std::istringstream rgb(line.substr(0, tab));
    LexiconEntry e;
    for (auto& v : e.rgb) {
      int x = -1;
      rgb >> x;
      if (x < 0 || x > 255) throw ArgumentError("oracle lexicon color out of range: '" + line + "'");
      v = x / 255.0;
    }
    e.anchor = anchor_for(line.substr(tab + 1));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace segtto
