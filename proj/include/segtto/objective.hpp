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
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "segtto/config.hpp"
#include "segtto/core.hpp"
#include "segtto/error.hpp"
#include "segtto/tensor.hpp"

namespace segtto {

/// n x p grid of text features: row j holds the p prompt variants of
/// category j.
using TextGrid = std::vector<std::vector<TextEmbedding>>;

/// Per-location distribution over the n categories.
struct ProbabilityMap {
  int rows = 0;
  int cols = 0;
  int categories = 0;
  std::vector<double> probs;
  int source_view = 0;

  std::span<const double> at(int q) const {
    return {probs.data() + static_cast<std::size_t>(q) * categories, static_cast<std::size_t>(categories)};
  }
  int locations() const { return rows * cols; }
};

struct PseudoLabelMap {
  int rows = 0;
  int cols = 0;
  int categories = 0;
  std::vector<double> labels;

  std::span<const double> at(int q) const {
    return {labels.data() + static_cast<std::size_t>(q) * categories, static_cast<std::size_t>(categories)};
  }
};

struct LossMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  int view = 0;
};

inline constexpr double kLogClamp = 1e-12;

namespace detail {

inline void check_text_grid(const TextGrid& text, std::size_t depth) {
  if (text.empty()) throw ArgumentError("text grid has no categories");
  const std::size_t p = text.front().size();
  if (p == 0) throw ArgumentError("text grid has no prompts");
  for (const auto& row : text) {
    if (row.size() != p) throw ArgumentError("text grid rows must all have p prompts");
    for (const auto& e : row) {
      if (e.values.size() != depth)
        throw ArgumentError("text embedding dimension does not match visual depth");
      for (double v : e.values)
        if (!std::isfinite(v)) throw NumericError("non-finite text feature");
    }
  }
}

inline void softmax_inplace(std::span<double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (auto& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : x) v /= sum;
}

}  // namespace detail

/// Category logits are tau times the prompt-averaged cosine similarity
/// between each location's feature and the category's text features; the
/// result is the softmax over categories.
inline ProbabilityMap probability_map(const FeatureMap& visual, const TextGrid& text, double temperature,
                                      int view_index = 0) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ArgumentError("probability_map: temperature must be positive");
  if (!visual.values.all_finite()) throw NumericError("probability_map: non-finite visual feature");
  const std::size_t d = static_cast<std::size_t>(visual.depth());
  detail::check_text_grid(text, d);
  const int n = static_cast<int>(text.size());
  const std::size_t p = text.front().size();

  std::vector<Vec> unit;
  unit.reserve(n * p);
  for (const auto& row : text)
    for (const auto& e : row) {
      const double en = norm(e.values);
      Vec u = e.values;
      for (auto& v : u) v = en > 0.0 ? v / en : 0.0;
      unit.push_back(std::move(u));
    }

  ProbabilityMap pm{visual.rows(), visual.cols(), n, {}, view_index};
  pm.probs.resize(static_cast<std::size_t>(pm.locations()) * n);
  for (int r = 0; r < visual.rows(); ++r)
    for (int c = 0; c < visual.cols(); ++c) {
      auto a = visual.values.pixel(r, c);
      const double an = norm(a);
      std::span<double> logits(pm.probs.data() + static_cast<std::size_t>(r * visual.cols() + c) * n, n);
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < p; ++k) s += an > 0.0 ? dot(a, unit[j * p + k]) / an : 0.0;
        logits[j] = temperature * (s / static_cast<double>(p));
      }
      detail::softmax_inplace(logits);
    }
  return pm;
}

inline LossMap entropy_map(const ProbabilityMap& pm) {
  LossMap out{pm.rows, pm.cols, std::vector<double>(pm.locations()), pm.source_view};
  for (int q = 0; q < pm.locations(); ++q) {
    double h = 0.0;
    for (double pj : pm.at(q))
      if (pj > 0.0) h -= pj * std::log(pj);
    out.values[q] = std::max(h, 0.0);
  }
  return out;
}

/// Hard mode: one-hot argmax (ties to the lowest index). Soft mode: a copy
/// of the probabilities; either way the result is a constant with respect
/// to the optimized parameters.
inline PseudoLabelMap pseudo_labels(const ProbabilityMap& pm, PseudoLabelMode mode) {
  PseudoLabelMap out{pm.rows, pm.cols, pm.categories, {}};
  if (mode == PseudoLabelMode::kSoft) {
    out.labels = pm.probs;
    return out;
  }
  out.labels.assign(pm.probs.size(), 0.0);
  for (int q = 0; q < pm.locations(); ++q) {
    auto row = pm.at(q);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    out.labels[static_cast<std::size_t>(q) * pm.categories + best] = 1.0;
  }
  return out;
}

inline LossMap cross_entropy_map(const ProbabilityMap& pm, const PseudoLabelMap& labels) {
  if (pm.rows != labels.rows || pm.cols != labels.cols || pm.categories != labels.categories)
    throw ArgumentError("cross_entropy_map: shape mismatch");
  LossMap out{pm.rows, pm.cols, std::vector<double>(pm.locations()), pm.source_view};
  for (int q = 0; q < pm.locations(); ++q) {
    auto p = pm.at(q);
    auto y = labels.at(q);
    double ce = 0.0;
    for (int j = 0; j < pm.categories; ++j)
      if (y[j] != 0.0) ce -= y[j] * std::log(std::max(p[j], kLogClamp));
    out.values[q] = std::max(ce, 0.0);
  }
  return out;
}

/// Weights w such that aggregate(values) = sum_q w_q values_q. For max and
/// median these are the subgradient picked by the first maximal / middle
/// elements.
inline std::vector<double> aggregation_weights(std::span<const double> values, AggregationMode mode) {
  if (values.empty()) throw ArgumentError("spatial aggregation of an empty map");
  const std::size_t n = values.size();
  std::vector<double> w(n, 0.0);
  switch (mode) {
    case AggregationMode::kMean:
      std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(n));
      break;
    case AggregationMode::kMax:
      w[std::max_element(values.begin(), values.end()) - values.begin()] = 1.0;
      break;
    case AggregationMode::kMedian: {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
      if (n % 2 == 1) {
        w[idx[n / 2]] = 1.0;
      } else {
        w[idx[n / 2 - 1]] += 0.5;
        w[idx[n / 2]] += 0.5;
      }
      break;
    }
  }
  return w;
}

/// Median of an even count is the mean of the middle pair.
inline double spatial_aggregate(std::span<const double> values, AggregationMode mode) {
  if (values.empty()) throw ArgumentError("spatial aggregation of an empty map");
  switch (mode) {
    case AggregationMode::kMean: {
      double s = 0.0;
      for (double v : values) s += v;
      return s / static_cast<double>(values.size());
    }
    case AggregationMode::kMax:
      return *std::max_element(values.begin(), values.end());
    case AggregationMode::kMedian: {
      std::vector<double> sorted(values.begin(), values.end());
      std::sort(sorted.begin(), sorted.end());
      const std::size_t n = sorted.size();
      return n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    }
  }
  return 0.0;
}

inline double spatial_aggregate(const LossMap& lm, AggregationMode mode) {
  return spatial_aggregate(std::span<const double>(lm.values), mode);
}

enum class LossKind { kEntropy, kCrossEntropy };

inline const char* to_string(LossKind k) { return k == LossKind::kEntropy ? "entropy" : "ce"; }

/// Scalar loss over a set of views and its gradient w.r.t. every text
/// feature b_k^j.
struct TextLossGradient {
  double value = 0.0;
  std::vector<std::vector<Vec>> grad;  // n x p x d
};

/// Per-location losses are averaged over the views, then spatially
/// aggregated. `labels` (one per view) is required for cross-entropy and is
/// treated as a constant.
inline TextLossGradient text_loss_and_gradient(std::span<const FeatureMap> views, const TextGrid& text,
                                               double temperature, LossKind kind, AggregationMode mode,
                                               std::span<const PseudoLabelMap> labels = {}) {
  if (views.empty()) throw ArgumentError("text loss needs at least one view");
  if (kind == LossKind::kCrossEntropy && labels.size() != views.size())
    throw ArgumentError("cross-entropy loss needs one pseudo-label map per view");
  const int rows = views.front().rows();
  const int cols = views.front().cols();
  for (const auto& v : views)
    if (v.rows() != rows || v.cols() != cols) throw ArgumentError("all views must share the feature grid");
  const std::size_t d = static_cast<std::size_t>(views.front().depth());
  detail::check_text_grid(text, d);
  const int n = static_cast<int>(text.size());
  const std::size_t p = text.front().size();
  const int locations = rows * cols;
  const double inv_views = 1.0 / static_cast<double>(views.size());

  // Forward: per-location view-averaged loss.
  std::vector<ProbabilityMap> pms;
  pms.reserve(views.size());
  std::vector<double> per_location(locations, 0.0);
  for (std::size_t i = 0; i < views.size(); ++i) {
    pms.push_back(probability_map(views[i], text, temperature, static_cast<int>(i)));
    const LossMap lm = kind == LossKind::kEntropy ? entropy_map(pms.back()) : cross_entropy_map(pms.back(), labels[i]);
    for (int q = 0; q < locations; ++q) per_location[q] += lm.values[q] * inv_views;
  }
  TextLossGradient out;
  out.value = spatial_aggregate(std::span<const double>(per_location), mode);
  const std::vector<double> w = aggregation_weights(per_location, mode);

  std::vector<Vec> unit(n * p);
  std::vector<double> text_norm(n * p);
  for (int j = 0; j < n; ++j)
    for (std::size_t k = 0; k < p; ++k) {
      const auto& b = text[j][k].values;
      text_norm[j * p + k] = norm(b);
      unit[j * p + k] = b;
      for (auto& v : unit[j * p + k]) v = text_norm[j * p + k] > 0.0 ? v / text_norm[j * p + k] : 0.0;
    }

  out.grad.assign(n, std::vector<Vec>(p, Vec(d, 0.0)));
  std::vector<double> dlogit(n);
  Vec a_unit(d);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& pm = pms[i];
    for (int q = 0; q < locations; ++q) {
      const double upstream = w[q] * inv_views;
      if (upstream == 0.0) continue;
      auto probs = pm.at(q);
      if (kind == LossKind::kEntropy) {
        double h = 0.0;
        for (double pj : probs)
          if (pj > 0.0) h -= pj * std::log(pj);
        for (int j = 0; j < n; ++j)
          dlogit[j] = probs[j] > 0.0 ? -probs[j] * (std::log(probs[j]) + h) : 0.0;
      } else {
        auto y = labels[i].at(q);
        double ysum = 0.0;
        for (double v : y) ysum += v;
        for (int j = 0; j < n; ++j) dlogit[j] = probs[j] * ysum - y[j];
      }
      auto a = views[i].values.pixel(q / cols, q % cols);
      const double an = norm(a);
      if (!(an > 0.0)) continue;
      for (std::size_t t = 0; t < d; ++t) a_unit[t] = a[t] / an;
      // d logit_j / d b_jk = (tau / p) (a_hat - cos * b_hat) / |b|
      for (int j = 0; j < n; ++j) {
        const double g = upstream * dlogit[j] * temperature / static_cast<double>(p);
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < p; ++k) {
          const std::size_t idx = j * p + k;
          if (!(text_norm[idx] > 0.0)) continue;
          const double cs = dot(a_unit, unit[idx]);
          const double scale = g / text_norm[idx];
          auto& gb = out.grad[j][k];
          for (std::size_t t = 0; t < d; ++t) gb[t] += scale * (a_unit[t] - cs * unit[idx][t]);
        }
      }
    }
  }
  return out;
}

}  // namespace segtto
