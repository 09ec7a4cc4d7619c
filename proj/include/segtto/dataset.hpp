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
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "segtto/image_io.hpp"
#include "segtto/metrics.hpp"
#include "segtto/pipeline.hpp"

namespace segtto {

struct Backends {
  const ImageEncoder* image_encoder = nullptr;
  const TextEncoder* text_encoder = nullptr;
  const Decoder* decoder = nullptr;

  bool concurrent_safe() const {
    return image_encoder->concurrent_safe() && text_encoder->concurrent_safe() && decoder->concurrent_safe();
  }
};

struct DatasetOptions {
  int jobs = 1;
  bool fallback_baseline = false;
  bool keep_debug = false;
  std::vector<AttributeSet> attributes;
  std::ostream* log = &std::cerr;
  /// Invoked once per processed image, in image-id order.
  std::function<void(const std::string& id, const SegmentationResult&)> on_result;
};

struct DatasetSummary {
  Report report;
  std::optional<ConfusionAccumulator> confusion;
  std::vector<std::string> image_ids;
  int degraded = 0;
  double wall_seconds = 0.0;
};

/// Image files under `<root>/images`, sorted by file name.
inline std::vector<std::filesystem::path> list_dataset_images(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> out;
  const auto dir = root / "images";
  if (!std::filesystem::exists(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  return out;
}

/// Segments every image of a dataset directory and writes
/// `pred/<id>.png`, `per_image.jsonl`, `summary.json` (deterministic) and
/// `timing.json` (wall clock) under output_dir.
inline DatasetSummary run_dataset(const std::filesystem::path& root, const CategoryVocabulary& vocab,
                                  const SegTTOConfig& cfg_in, const std::filesystem::path& output_dir,
                                  const Backends& backends, const DatasetOptions& options = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const SegTTOConfig cfg = validate_config(cfg_in);
  vocab.validate();
  const auto files = list_dataset_images(root);
  const int count = static_cast<int>(files.size());

  struct Slot {
    std::string id;
    std::optional<SegmentationResult> result;
    std::optional<SegmentationMask> gt;
    std::string error;
  };
  std::vector<Slot> slots(count);

  auto process = [&](int i) {
    Slot& s = slots[i];
    s.id = files[i].stem().string();
    SegmentationJob job;
    try {
      job.image = load_image(files[i], s.id);
    } catch (const std::exception& e) {
      s.error = e.what();
      return;
    }
    job.vocab = vocab;
    job.cfg = cfg;
    job.image_encoder = backends.image_encoder;
    job.text_encoder = backends.text_encoder;
    job.decoder = backends.decoder;
    job.attributes = options.attributes;
    job.fallback_baseline = options.fallback_baseline;
    job.keep_debug = options.keep_debug;
    const auto mask_path = root / "masks" / (s.id + ".png");
    if (std::filesystem::exists(mask_path)) s.gt = load_mask(mask_path);
    s.result = segment_image(job);
  };

  const int workers = backends.concurrent_safe() ? std::max(1, std::min(options.jobs, count)) : 1;
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) process(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (int i = next++; i < count; i = next++) process(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  DatasetSummary summary;
  summary.report.class_names = vocab.names;
  summary.report.config = cfg;
  std::filesystem::create_directories(output_dir / "pred");
  std::ofstream per_image(output_dir / "per_image.jsonl", std::ios::trunc);
  ConfusionAccumulator total(static_cast<int>(vocab.size()));
  bool any_gt = false;
  for (auto& s : slots) {
    if (!s.result) {
      ++summary.report.skipped_count;
      if (options.log) *options.log << "skipping unreadable image '" << s.id << "': " << s.error << "\n";
      continue;
    }
    ++summary.report.image_count;
    summary.image_ids.push_back(s.id);
    const auto& res = *s.result;
    if (res.degraded) ++summary.degraded;
    save_mask(output_dir / "pred" / (s.id + ".png"), res.mask);
    nlohmann::json rec = {{"id", s.id}, {"degraded", res.degraded}, {"kept_views", res.selection.kept_indices}};
    if (res.trace.final_ssl) rec["final_ssl"] = *res.trace.final_ssl;
    if (res.trace.initial_ssl) rec["initial_ssl"] = *res.trace.initial_ssl;
    if (s.gt) {
      ConfusionAccumulator one(static_cast<int>(vocab.size()));
      accumulate(one, res.mask, *s.gt);
      if (one.counted() > 0) rec["miou"] = compute_miou(one).miou;
      total.merge(one);
      any_gt = true;
    }
    per_image << rec.dump() << "\n";
    if (options.on_result) options.on_result(s.id, res);
  }
  if (any_gt && total.counted() > 0) {
    const MiouResult m = compute_miou(total);
    summary.report.per_class_iou = m.per_class;
    summary.report.miou = m.miou;
    summary.confusion = total;
  }
  summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream(output_dir / "summary.json", std::ios::trunc) << summary.report.to_json().dump(2) << "\n";
  std::ofstream(output_dir / "timing.json", std::ios::trunc)
      << nlohmann::json{{"wall_seconds", summary.wall_seconds}, {"workers", workers}}.dump(2) << "\n";
  return summary;
}

}  // namespace segtto
