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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "segtto/config.hpp"
#include "segtto/core.hpp"
#include "segtto/error.hpp"

namespace segtto {

namespace detail {

inline std::vector<std::uint8_t> read_png(const std::filesystem::path& path, std::uint32_t format, int& rows,
                                          int& cols) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw ArgumentError("cannot read PNG '" + path.string() + "': " + img.message);
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ArgumentError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  rows = static_cast<int>(img.height);
  cols = static_cast<int>(img.width);
  return buf;
}

inline void write_png(const std::filesystem::path& path, std::uint32_t format, int rows, int cols,
                      const std::vector<std::uint8_t>& buf) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(cols);
  img.height = static_cast<png_uint_32>(rows);
  img.format = format;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw Error("cannot write PNG '" + path.string() + "': " + img.message);
}

}  // namespace detail

inline ImageTensor load_image(const std::filesystem::path& path, std::string source_id = {}) {
  int rows = 0, cols = 0;
  const auto buf = detail::read_png(path, PNG_FORMAT_RGB, rows, cols);
  ImageTensor img{Tensor3(rows, cols, 3), source_id.empty() ? path.stem().string() : std::move(source_id)};
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels.data[i] = buf[i] / 255.0;
  return img;
}

inline void save_image(const std::filesystem::path& path, const ImageTensor& image) {
  std::vector<std::uint8_t> buf(image.pixels.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.pixels.data[i], 0.0, 1.0) * 255.0));
  detail::write_png(path, PNG_FORMAT_RGB, image.rows(), image.cols(), buf);
}

/// Single-channel mask; pixel value is the label (255 = ignore).
inline SegmentationMask load_mask(const std::filesystem::path& path) {
  int rows = 0, cols = 0;
  const auto buf = detail::read_png(path, PNG_FORMAT_GRAY, rows, cols);
  SegmentationMask m(rows, cols);
  for (std::size_t i = 0; i < buf.size(); ++i) m.labels[i] = buf[i];
  return m;
}

inline void save_mask(const std::filesystem::path& path, const SegmentationMask& mask) {
  std::vector<std::uint8_t> buf(mask.labels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    if (mask.labels[i] < 0 || mask.labels[i] > 255) throw ArgumentError("save_mask: label does not fit in 8 bits");
    buf[i] = static_cast<std::uint8_t>(mask.labels[i]);
  }
  detail::write_png(path, PNG_FORMAT_GRAY, mask.rows, mask.cols, buf);
}

/// Grayscale rendering of per-pixel counts scaled so the maximum is white.
inline void save_counts_image(const std::filesystem::path& path, int rows, int cols, const std::vector<int>& counts) {
  const int mx = std::max(1, *std::max_element(counts.begin(), counts.end()));
  std::vector<std::uint8_t> buf(counts.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<std::uint8_t>(std::lround(255.0 * counts[i] / mx));
  detail::write_png(path, PNG_FORMAT_GRAY, rows, cols, buf);
}

/// One category per line, optional tab-separated description, optional
/// `#image_type: <string>` header line.
inline CategoryVocabulary parse_vocabulary(std::istream& in) {
  CategoryVocabulary vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#image_type:", 0) == 0) {
      vocab.image_type = detail::trim(line.substr(12));
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    vocab.names.push_back(detail::trim(line.substr(0, tab)));
    if (tab == std::string::npos || detail::trim(line.substr(tab + 1)).empty())
      vocab.descriptions.emplace_back();
    else
      vocab.descriptions.emplace_back(detail::trim(line.substr(tab + 1)));
  }
  vocab.validate();
  return vocab;
}

inline CategoryVocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open vocabulary file '" + path.string() + "'");
  return parse_vocabulary(in);
}

}  // namespace segtto
