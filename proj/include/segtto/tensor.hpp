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
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

#include "segtto/error.hpp"

namespace segtto {

/// Dense row-major (row, col, channel) array of doubles.
struct Tensor3 {
  int rows = 0;
  int cols = 0;
  int channels = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int r, int c, int ch, double fill = 0.0)
      : rows(r), cols(c), channels(ch),
        data(static_cast<std::size_t>(r) * c * ch, fill) {}

  std::size_t offset(int r, int c) const {
    return (static_cast<std::size_t>(r) * cols + c) * channels;
  }
  double& at(int r, int c, int ch) { return data[offset(r, c) + ch]; }
  double at(int r, int c, int ch) const { return data[offset(r, c) + ch]; }

  std::span<double> pixel(int r, int c) { return {data.data() + offset(r, c), static_cast<std::size_t>(channels)}; }
  std::span<const double> pixel(int r, int c) const {
    return {data.data() + offset(r, c), static_cast<std::size_t>(channels)};
  }

  bool empty() const { return data.empty(); }
  bool same_shape(const Tensor3& o) const {
    return rows == o.rows && cols == o.cols && channels == o.channels;
  }
  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }
  bool operator==(const Tensor3&) const = default;
};

namespace detail {

struct Tap {
  int lo;
  int hi;
  double frac;  // weight of hi
};

// Source taps for one output index, half-pixel centers, clamped at borders.
inline Tap bilinear_tap(int out_index, int in_size, int out_size) {
  if (in_size == out_size) return {out_index, out_index, 0.0};
  const double scale = static_cast<double>(in_size) / out_size;
  double src = (out_index + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  int lo = static_cast<int>(std::floor(src));
  if (lo > in_size - 1) lo = in_size - 1;
  const int hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - lo};
}

}  // namespace detail

/// Bilinear resample with the align-corners-false convention. Equal sizes
/// copy exactly.
inline Tensor3 resize_bilinear(const Tensor3& in, int out_rows, int out_cols) {
  if (in.empty() || out_rows < 1 || out_cols < 1)
    throw ArgumentError("resize_bilinear: empty input or target");
  if (in.rows == out_rows && in.cols == out_cols) return in;
  Tensor3 out(out_rows, out_cols, in.channels);
  std::vector<detail::Tap> col_taps(out_cols);
  for (int c = 0; c < out_cols; ++c) col_taps[c] = detail::bilinear_tap(c, in.cols, out_cols);
  for (int r = 0; r < out_rows; ++r) {
    const auto ty = detail::bilinear_tap(r, in.rows, out_rows);
    for (int c = 0; c < out_cols; ++c) {
      const auto& tx = col_taps[c];
      const double w00 = (1 - ty.frac) * (1 - tx.frac);
      const double w01 = (1 - ty.frac) * tx.frac;
      const double w10 = ty.frac * (1 - tx.frac);
      const double w11 = ty.frac * tx.frac;
      auto dst = out.pixel(r, c);
      auto p00 = in.pixel(ty.lo, tx.lo);
      auto p01 = in.pixel(ty.lo, tx.hi);
      auto p10 = in.pixel(ty.hi, tx.lo);
      auto p11 = in.pixel(ty.hi, tx.hi);
      for (int ch = 0; ch < in.channels; ++ch)
        dst[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
    }
  }
  return out;
}

inline Tensor3 flip_horizontal(const Tensor3& in) {
  Tensor3 out(in.rows, in.cols, in.channels);
  for (int r = 0; r < in.rows; ++r)
    for (int c = 0; c < in.cols; ++c) {
      auto src = in.pixel(r, in.cols - 1 - c);
      std::copy(src.begin(), src.end(), out.pixel(r, c).begin());
    }
  return out;
}

inline Tensor3 crop(const Tensor3& in, int r1, int c1, int r2, int c2) {
  if (r1 < 0 || c1 < 0 || r2 > in.rows || c2 > in.cols || r1 >= r2 || c1 >= c2)
    throw ArgumentError("crop: box outside tensor");
  Tensor3 out(r2 - r1, c2 - c1, in.channels);
  for (int r = r1; r < r2; ++r)
    for (int c = c1; c < c2; ++c) {
      auto src = in.pixel(r, c);
      std::copy(src.begin(), src.end(), out.pixel(r - r1, c - c1).begin());
    }
  return out;
}

// Small dense-vector helpers.

using Vec = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline Vec normalized(std::span<const double> a) {
  const double n = norm(a);
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("normalize: zero or non-finite vector");
  Vec out(a.begin(), a.end());
  for (auto& v : out) v /= n;
  return out;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  return dot(a, b) / (na * nb);
}

/// splitmix64 finalizer; the basis of every seeded hash in the oracle backend.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) { return mix64(h ^ mix64(v)); }

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Maps a hash to a double in [-1, 1).
inline double hash_to_unit_interval(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

}  // namespace segtto
