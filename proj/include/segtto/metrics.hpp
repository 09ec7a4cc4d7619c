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

#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "segtto/config.hpp"
#include "segtto/core.hpp"
#include "segtto/error.hpp"

namespace segtto {

inline constexpr int kIgnoreLabel = 255;

#ifndef SEGTTO_VERSION
#define SEGTTO_VERSION "0.1.0"
#endif

/// Confusion counts, rows = ground truth, columns = prediction.
struct ConfusionAccumulator {
  int classes = 0;
  std::vector<std::int64_t> matrix;
  std::int64_t ignored = 0;

  ConfusionAccumulator() = default;
  explicit ConfusionAccumulator(int n) : classes(n), matrix(static_cast<std::size_t>(n) * n, 0) {}

  std::int64_t& at(int gt, int pred) { return matrix[static_cast<std::size_t>(gt) * classes + pred]; }
  std::int64_t at(int gt, int pred) const { return matrix[static_cast<std::size_t>(gt) * classes + pred]; }

  std::int64_t counted() const {
    std::int64_t s = 0;
    for (auto v : matrix) s += v;
    return s;
  }

  void merge(const ConfusionAccumulator& o) {
    if (o.classes != classes) throw ArgumentError("confusion merge: class count mismatch");
    for (std::size_t i = 0; i < matrix.size(); ++i) matrix[i] += o.matrix[i];
    ignored += o.ignored;
  }
  bool operator==(const ConfusionAccumulator&) const = default;
};

/// Adds one image; ground-truth pixels equal to kIgnoreLabel are skipped.
inline void accumulate(ConfusionAccumulator& conf, const SegmentationMask& pred, const SegmentationMask& gt) {
  if (pred.rows != gt.rows || pred.cols != gt.cols)
    throw ArgumentError("accumulate: prediction and ground truth shapes differ");
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i];
    if (g == kIgnoreLabel) {
      ++conf.ignored;
      continue;
    }
    const int p = pred.labels[i];
    if (g < 0 || g >= conf.classes) throw ArgumentError("accumulate: ground-truth label out of range");
    if (p < 0 || p >= conf.classes) throw ArgumentError("accumulate: predicted label out of range");
    ++conf.at(g, p);
  }
}

struct MiouResult {
  std::vector<std::optional<double>> per_class;  // empty optional: zero union
  double miou = 0.0;
};

/// IoU_c = tp / (gt_c + pred_c - tp); classes with an empty union are left
/// out of the mean.
inline MiouResult compute_miou(const ConfusionAccumulator& conf) {
  if (conf.counted() == 0) throw MetricError("compute_miou: no counted pixels");
  MiouResult out;
  double sum = 0.0;
  int valid = 0;
  for (int c = 0; c < conf.classes; ++c) {
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < conf.classes; ++k) {
      row += conf.at(c, k);
      col += conf.at(k, c);
    }
    const std::int64_t tp = conf.at(c, c);
    const std::int64_t uni = row + col - tp;
    if (uni == 0) {
      out.per_class.push_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    out.per_class.push_back(iou);
    sum += iou;
    ++valid;
  }
  out.miou = valid ? sum / valid : 0.0;
  return out;
}

struct Report {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> per_class_iou;
  std::optional<double> miou;  // absent when no ground truth was available
  int image_count = 0;
  int skipped_count = 0;
  SegTTOConfig config;
  std::string version = SEGTTO_VERSION;

  nlohmann::json to_json() const {
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      nlohmann::json iou = nullptr;
      if (c < per_class_iou.size() && per_class_iou[c]) iou = *per_class_iou[c];
      classes.push_back({{"name", class_names[c]}, {"iou", iou}});
    }
    nlohmann::json cfg = nlohmann::json::object();
    for (const auto& [k, v] : config_to_pairs(config)) cfg[k] = v;
    return {{"version", version},
            {"images", image_count},
            {"skipped", skipped_count},
            {"miou", miou ? nlohmann::json(*miou) : nlohmann::json(nullptr)},
            {"classes", classes},
            {"config", cfg}};
  }

  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(32) << "class" << "IoU (%)\n";
    os << std::string(40, '-') << "\n";
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      os << std::left << std::setw(32) << class_names[c];
      if (c < per_class_iou.size() && per_class_iou[c])
        os << std::fixed << std::setprecision(2) << 100.0 * *per_class_iou[c];
      else
        os << "-";
      os << "\n";
    }
    os << std::string(40, '-') << "\n";
    os << std::left << std::setw(32) << "mIoU";
    if (miou)
      os << std::fixed << std::setprecision(2) << 100.0 * *miou;
    else
      os << "n/a";
    os << "\nimages: " << image_count << "  skipped: " << skipped_count << "\n";
    return os.str();
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "class,iou\n";
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      os << '"' << class_names[c] << "\",";
      if (c < per_class_iou.size() && per_class_iou[c]) os << std::setprecision(17) << *per_class_iou[c];
      os << "\n";
    }
    return os.str();
  }
};

/// Rebuilds the run config from a report's echo.
inline SegTTOConfig config_from_report(const nlohmann::json& report) {
  SegTTOConfig cfg;
  for (const auto& [k, v] : report.at("config").items()) apply_config_field(cfg, k, v.get<std::string>());
  return validate_config(cfg);
}

}  // namespace segtto
