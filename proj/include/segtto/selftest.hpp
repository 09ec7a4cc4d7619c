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

// Acceptance checks shared by the `segtto selftest` subcommand and the
// acceptance test binary. Every reference computation here is written out
// independently of the library code it checks.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "segtto/attributes.hpp"
#include "segtto/dataset.hpp"
#include "segtto/image_io.hpp"
#include "segtto/objective.hpp"
#include "segtto/oracle.hpp"
#include "segtto/pipeline.hpp"
#include "segtto/tuning.hpp"
#include "segtto/vfa.hpp"
#include "segtto/views.hpp"

namespace segtto::selftest {

namespace fs = std::filesystem;

struct Options {
  std::string fixture_dir;
  /// Runs the CLI with the given arguments (without the program name) and
  /// returns its exit code. Needed by the determinism check.
  std::function<int(const std::vector<std::string>&)> evaluate;
};

struct Outcome {
  bool passed = false;
  std::string detail;
  bool skipped = false;
};

struct Criterion {
  std::string name;
  double time_limit_seconds = 0.0;  // 0 means no limit
  bool gating = true;
  std::function<Outcome(const Options&)> run;
};

inline std::string default_fixture_dir() {
#ifdef SEGTTO_FIXTURE_DIR
  return SEGTTO_FIXTURE_DIR;
#else
  return "tests/fixtures";
#endif
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline Vec random_vec(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline double dot_ref(const Vec& a, const Vec& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

/// Plain half-pixel bilinear sample of channel ch at output pixel (r, c)
/// when resizing `in` to out_rows x out_cols.
inline double bilinear_ref(const Tensor3& in, int out_rows, int out_cols, int r, int c, int ch) {
  auto coord = [](int dst, int in_size, int out_size) {
    double s = (dst + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
    if (s < 0) s = 0;
    if (s > in_size - 1) s = in_size - 1;
    return s;
  };
  const double y = coord(r, in.rows, out_rows), x = coord(c, in.cols, out_cols);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, in.rows - 1), x1 = std::min(x0 + 1, in.cols - 1);
  const double fy = y - y0, fx = x - x0;
  auto v = [&](int rr, int cc) { return in.data[(static_cast<std::size_t>(rr) * in.cols + cc) * in.channels + ch]; };
  return (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1 - fx) * v(y1, x0) + fx * v(y1, x1));
}

inline ImageTensor three_region_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<std::array<double, 3>, 3> colors{};
  for (auto& c : colors)
    for (auto& ch : c) ch = u(rng);
  const double split_a = 0.25 + 0.25 * u(rng), split_b = 0.5 + 0.25 * u(rng);
  ImageTensor img{Tensor3(size, size, 3), "seed" + std::to_string(seed)};
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double t = (r + 0.7 * c) / (1.7 * size);
      const auto& col = t < split_a ? colors[0] : (t < split_b ? colors[1] : colors[2]);
      for (int ch = 0; ch < 3; ++ch) img.pixels.at(r, c, ch) = col[ch];
    }
  return img;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

// ---------------------------------------------------------------- PCGrad

inline Outcome check_pcgrad(const Options&) {
  using detail::dot_ref;
  auto close = [](const Vec& a, const Vec& b, double tol) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::abs(a[i] - b[i]) > tol) return false;
    return true;
  };
  if (!close(pcgrad_combine(Vec{1, 0}, Vec{0, 1}), {1, 1}, 1e-12)) return {false, "orthogonal example"};
  if (!close(pcgrad_combine(Vec{1, 0}, Vec{-1, 1}), {0.5, 1.5}, 1e-12)) return {false, "(0.5,1.5) example"};
  if (!close(pcgrad_combine(Vec{1, 0}, Vec{-1, 0}), {0, 0}, 1e-12)) return {false, "annihilation example"};

  std::mt19937_64 rng(20240611);
  std::uniform_int_distribution<int> dim(2, 64);
  int conflicting = 0;
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = static_cast<std::size_t>(dim(rng));
    const Vec a = detail::random_vec(rng, n), b = detail::random_vec(rng, n);
    const Vec got = pcgrad_combine(a, b);
    const double ab = dot_ref(a, b);
    if (ab >= 0) {
      for (std::size_t i = 0; i < n; ++i)
        if (got[i] != a[i] + b[i]) return {false, "non-conflicting pair not returned as the exact sum"};
      continue;
    }
    ++conflicting;
    Vec pa = a, pb = b;
    const double ca = ab / dot_ref(b, b), cb = ab / dot_ref(a, a);
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] -= ca * b[i];
      pb[i] -= cb * a[i];
    }
    const Vec la = pcgrad_project(a, b), lb = pcgrad_project(b, a);
    if (dot_ref(la, b) < -1e-6 || dot_ref(lb, a) < -1e-6) return {false, "projected gradient still conflicts"};
    for (std::size_t i = 0; i < n; ++i)
      worst = std::max({worst, std::abs(la[i] - pa[i]), std::abs(lb[i] - pb[i])});
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(got[i] - (pa[i] + pb[i])));
  }
  if (worst > 1e-9) return {false, "combined gradient differs from projection sum by " + detail::fmt("%.3g", worst)};
  return {true, "1000 pairs, " + std::to_string(conflicting) + " conflicting"};
}

// ------------------------------------------------------------- objective

inline Outcome check_objective(const Options&) {
  std::mt19937_64 rng(7);
  for (int n : {2, 3, 10, 100}) {
    // Identical text features for every category give a uniform softmax.
    TextGrid text(n, std::vector<TextEmbedding>{{Vec{1.0, 0.5, -0.25}, "x", false}});
    FeatureMap fm{Tensor3(2, 3, 3), ViewGeometry::full(8, 12)};
    for (auto& v : fm.values.data) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const auto pm = probability_map(fm, text, 100.0);
    const auto h = entropy_map(pm);
    for (double v : h.values)
      if (std::abs(v - std::log(static_cast<double>(n))) > 1e-9) return {false, "uniform entropy for n=" + std::to_string(n)};
  }

  OracleTextEncoder text_enc(8, 3);
  OracleImageEncoder image_enc(8, 3);
  CategoryVocabulary vocab({"sky", "grass", "road"});
  SegTTOConfig cfg;
  cfg.prompt_count = 2;
  cfg.prompts = {"a photo of a", "a {} in the scene"};
  cfg.temperature = 10.0;
  PromptBank bank = make_prompt_bank(text_enc, cfg.prompts, vocab);
  std::vector<FeatureMap> views;
  for (int i = 0; i < 3; ++i) views.push_back(image_enc.encode(detail::three_region_image(16, 100 + i)));
  const TextGrid text = compose_text_features(bank, text_enc);

  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto pm = probability_map(views[i], text, cfg.temperature);
    for (int q = 0; q < pm.locations(); ++q) {
      double s = 0;
      for (double p : pm.at(q)) s += p;
      if (std::abs(s - 1.0) > 1e-6) return {false, "probability row does not sum to 1"};
    }
    const auto h = entropy_map(pm);
    const auto ce = cross_entropy_map(pm, pseudo_labels(pm, PseudoLabelMode::kSoft));
    for (std::size_t q = 0; q < h.values.size(); ++q)
      if (std::abs(h.values[q] - ce.values[q]) > 1e-9) return {false, "soft self-label CE differs from entropy"};
  }

  // Central differences through the full bank for both losses.
  const auto labels = current_pseudo_labels(text, views, cfg);
  double worst = 0.0;
  for (LossKind kind : {LossKind::kEntropy, LossKind::kCrossEntropy}) {
    const auto analytic = bank_loss_and_gradient(bank, text_enc, views, cfg, kind, labels).grad;
    const Vec base = bank.flatten();
    Vec numeric(base.size());
    const double h = 1e-6;
    for (std::size_t i = 0; i < base.size(); ++i) {
      Vec p = base;
      p[i] = base[i] + h;
      bank.unflatten(p);
      const double up = bank_loss_and_gradient(bank, text_enc, views, cfg, kind, labels).value;
      p[i] = base[i] - h;
      bank.unflatten(p);
      const double down = bank_loss_and_gradient(bank, text_enc, views, cfg, kind, labels).value;
      numeric[i] = (up - down) / (2 * h);
    }
    bank.unflatten(base);
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      diff += (numeric[i] - analytic[i]) * (numeric[i] - analytic[i]);
      scale = std::max(scale, std::max(std::abs(numeric[i]), std::abs(analytic[i])));
    }
    const double rel = std::sqrt(diff) / std::max(std::sqrt(detail::dot_ref(numeric, numeric)), 1e-12);
    worst = std::max(worst, rel);
    if (scale == 0.0) return {false, "gradient is identically zero"};
  }
  if (worst > 1e-3) return {false, "finite-difference relative error " + detail::fmt("%.3g", worst)};
  return {true, "finite-difference relative error " + detail::fmt("%.2e", worst)};
}

// ------------------------------------------------------------- selection

inline Outcome check_selection(const Options&) {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 200; ++t) {
    const int m = std::uniform_int_distribution<int>(1, 128)(rng);
    const double fraction = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    // Few distinct values so ties are common; a sprinkling of NaN/inf.
    const int levels = std::uniform_int_distribution<int>(1, 6)(rng);
    std::vector<double> scores(m);
    for (auto& s : scores) {
      const int k = std::uniform_int_distribution<int>(0, levels + 1)(rng);
      s = k == levels ? std::numeric_limits<double>::quiet_NaN()
                      : (k == levels + 1 ? std::numeric_limits<double>::infinity() : 0.5 * k);
    }
    if (t % 3 == 0)
      for (auto& s : scores) s = std::uniform_real_distribution<double>(0, 1)(rng);

    std::vector<std::pair<double, int>> finite;
    for (int i = 0; i < m; ++i)
      if (std::isfinite(scores[i])) finite.push_back({scores[i], i});
    if (finite.empty()) {
      bool threw = false;
      try {
        select_views(scores, fraction);
      } catch (const SelectionError&) {
        threw = true;
      }
      if (!threw) return {false, "all-non-finite instance did not raise"};
      continue;
    }
    std::sort(finite.begin(), finite.end());
    const int want = std::min<int>(std::max(1, static_cast<int>(std::floor(fraction * m))), static_cast<int>(finite.size()));
    std::vector<int> expect;
    for (int i = 0; i < want; ++i) expect.push_back(finite[i].second);
    std::sort(expect.begin(), expect.end());
    if (select_views(scores, fraction).kept_indices != expect)
      return {false, "instance " + std::to_string(t) + " disagrees with brute force"};
  }
  std::vector<double> s64(64);
  for (int i = 0; i < 64; ++i) s64[i] = std::sin(i * 1.3);
  const auto kept = select_views(s64, 0.2).kept_indices.size();
  if (kept != 12) return {false, "m=64 at 0.2 kept " + std::to_string(kept)};
  return {true, "200 instances, m=64 keeps 12"};
}

// ------------------------------------------------------------------- VFA

inline Outcome check_vfa(const Options&) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> size(1, 32), depth(1, 8), crops(0, 8), grid(1, 10);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int H = size(rng), W = size(rng), d = depth(rng);
    const int gr = std::min(grid(rng), H), gc = std::min(grid(rng), W);
    FeatureMap orig{Tensor3(gr, gc, d), ViewGeometry::full(H, W)};
    for (auto& v : orig.values.data) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    std::vector<FeatureMap> views;
    const int nv = crops(rng);
    for (int i = 0; i < nv; ++i) {
      const int h1 = std::uniform_int_distribution<int>(0, H - 1)(rng);
      const int w1 = std::uniform_int_distribution<int>(0, W - 1)(rng);
      const int h2 = std::uniform_int_distribution<int>(h1 + 1, H)(rng);
      const int w2 = std::uniform_int_distribution<int>(w1 + 1, W)(rng);
      FeatureMap v{Tensor3(grid(rng), grid(rng), d), ViewGeometry{h1, w1, h2, w2, (rng() & 1) != 0, H, W}};
      for (auto& x : v.values.data) x = std::uniform_real_distribution<double>(-1, 1)(rng);
      views.push_back(std::move(v));
    }
    const FeatureMap got = aggregate_visual(orig, views, {H, W}, {gr, gc});
    if (views.empty()) {
      // No selected views: the original features pass through unchanged.
      if (!(got.values == orig.values)) return {false, "empty selection changed features"};
      continue;
    }

    // Naive per-pixel sum / count, then the same resize back.
    Tensor3 mean(H, W, d);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c)
        for (int ch = 0; ch < d; ++ch) {
          double sum = detail::bilinear_ref(orig.values, H, W, r, c, ch);
          int count = 1;
          for (const auto& v : views) {
            const auto& g = v.geometry;
            if (r < g.h1 || r >= g.h2 || c < g.w1 || c >= g.w2) continue;
            const int lr = r - g.h1, lc0 = c - g.w1;
            const int lc = g.hflip ? (g.w2 - g.w1 - 1 - lc0) : lc0;
            sum += detail::bilinear_ref(v.values, g.h2 - g.h1, g.w2 - g.w1, lr, lc, ch);
            ++count;
          }
          mean.at(r, c, ch) = sum / count;
        }
    for (int r = 0; r < gr; ++r)
      for (int c = 0; c < gc; ++c)
        for (int ch = 0; ch < d; ++ch)
          worst = std::max(worst, std::abs(got.values.at(r, c, ch) - detail::bilinear_ref(mean, gr, gc, r, c, ch)));
  }
  if (worst > 1e-6) return {false, "max deviation from naive loop " + detail::fmt("%.3g", worst)};

  // Fixed points: empty selection, and a selection of the original itself
  // on a canvas the size of the feature grid.
  FeatureMap orig{Tensor3(6, 5, 4), ViewGeometry::full(6, 5)};
  for (auto& v : orig.values.data) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  if (!(aggregate_visual(orig, {}, {6, 5}, {6, 5}).values == orig.values)) return {false, "empty selection changed features"};
  std::vector<FeatureMap> same{orig};
  if (!(aggregate_visual(orig, same, {6, 5}, {6, 5}).values == orig.values))
    return {false, "identical-view selection changed features"};
  FeatureMap big{Tensor3(3, 3, 2), ViewGeometry::full(24, 24)};
  for (auto& v : big.values.data) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  if (!(aggregate_visual(big, {}, {24, 24}, {3, 3}).values == big.values))
    return {false, "empty selection changed upsampled features"};
  return {true, "100 instances, max deviation " + detail::fmt("%.2e", worst)};
}

// ------------------------------------------------------- attribute math

inline Outcome check_attribute_math(const Options&) {
  std::mt19937_64 rng(11);
  OracleTextEncoder enc(16, 1);
  const std::vector<std::string> names = {"long thin dark line", "rough grey surface", "branching pattern",
                                          "jagged edges",        "shadowed gap",        "uneven texture"};
  const Vec ref = normalized(detail::random_vec(rng, 16));
  const AttributeSet set = weight_attributes(embed_attributes("crack", names, enc), ref);
  const Vec agg = aggregate_attributes(set);
  if (std::abs(norm(agg) - 1.0) > 1e-6) return {false, "aggregate is not unit norm"};
  for (int t = 0; t < 20; ++t) {
    std::vector<std::size_t> perm(names.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    AttributeSet shuffled{set.category, {}, {}, {}};
    for (auto i : perm) {
      shuffled.attributes.push_back(set.attributes[i]);
      shuffled.embeddings.push_back(set.embeddings[i]);
      shuffled.weights.push_back(set.weights[i]);
    }
    const Vec other = aggregate_attributes(shuffled);
    for (std::size_t i = 0; i < agg.size(); ++i)
      if (std::abs(other[i] - agg[i]) > 1e-12) return {false, "aggregation depends on attribute order"};
  }

  std::vector<TextEmbedding> tuned;
  for (int k = 0; k < 5; ++k) tuned.push_back({normalized(detail::random_vec(rng, 16)), "crack", true});
  const auto m0 = mix_text_embedding(tuned, agg, 0.0).values;
  const auto m1 = mix_text_embedding(tuned, agg, 1.0).values;
  for (double beta : {0.1, 0.25, 0.5, 0.8, 0.93}) {
    const auto mb = mix_text_embedding(tuned, agg, beta).values;
    for (std::size_t i = 0; i < mb.size(); ++i)
      if (std::abs(mb[i] - ((1 - beta) * m0[i] + beta * m1[i])) > 1e-9) return {false, "mix is not affine in beta"};
  }
  if (m0 != agg) return {false, "beta=0 does not return the attribute vector"};
  Vec mean(16, 0.0);
  for (const auto& t : tuned)
    for (std::size_t i = 0; i < 16; ++i) mean[i] += t.values[i];
  for (auto& v : mean) v *= 1.0 / 5.0;
  if (m1 != mean) return {false, "beta=1 does not return the prompt mean"};

  const auto templates = imagenet_templates();
  std::vector<Vec> attr_t(80, agg);
  for (std::size_t p : {1u, 5u, 80u}) {
    std::vector<TextEmbedding> tp(tuned.begin(), tuned.begin() + std::min<std::size_t>(p, tuned.size()));
    while (tp.size() < p) tp.push_back(tuned[tp.size() % tuned.size()]);
    std::vector<TextEmbedding> frozen;
    for (std::size_t k = p; k < 80; ++k) frozen.push_back(encode_text(enc, fill_template(templates[k], "crack")));
    if (concat_variant(tp, frozen, attr_t, 0.5).size() != 80) return {false, "concat width is not 80 for p=" + std::to_string(p)};
  }
  return {true, "unit norm, order-free, affine, width 80"};
}

// -------------------------------------------------------------- plug-in

inline SegmentationJob oracle_job(const ImageTensor& img, const OracleImageEncoder& ie, const OracleTextEncoder& te,
                                  const ReferenceDecoder& dec, const CategoryVocabulary& vocab, const SegTTOConfig& cfg) {
  SegmentationJob job;
  job.image = img;
  job.vocab = vocab;
  job.cfg = cfg;
  job.image_encoder = &ie;
  job.text_encoder = &te;
  job.decoder = &dec;
  return job;
}

inline Outcome check_plugin(const Options& opts) {
  const fs::path root = fs::path(opts.fixture_dir) / "oracle3";
  const CategoryVocabulary vocab = load_vocabulary(root / "vocab.txt");
  SegTTOConfig cfg = load_config_file(root / "segtto.conf");
  cfg.entropy_steps = 0;
  cfg.ce_steps = 0;
  cfg.attribute_mode = AttributeMode::kNone;
  cfg.visual_aggregation = false;
  OracleImageEncoder ie(32, 0);
  OracleTextEncoder te(32, 0);
  ReferenceDecoder dec;
  int images = 0;
  for (const auto& path : list_dataset_images(root)) {
    const auto job = oracle_job(load_image(path), ie, te, dec, vocab, cfg);
    const auto tto = segment_image(job);
    const auto base = baseline_segment(job);
    if (tto.mask.labels != base.mask.labels) return {false, "mask differs from baseline on " + path.filename().string()};
    if (!(tto.visual.values == base.visual.values)) return {false, "features differ from baseline"};
    for (std::size_t j = 0; j < base.text_bank.size(); ++j)
      if (tto.text_bank[j].values != base.text_bank[j].values) return {false, "text features differ from baseline"};
    ++images;
  }
  if (images == 0) return {false, "no fixture images found under " + root.string()};
  return {true, std::to_string(images) + " images bitwise identical"};
}

// ------------------------------------------------------------ end-to-end

inline Outcome check_end_to_end(const Options&) {
  const CategoryVocabulary vocab({"sky", "grass", "road"});
  OracleImageEncoder ie(32, 0);
  OracleTextEncoder te(32, 0);
  ReferenceDecoder dec;
  const std::vector<std::vector<std::string>> attrs = {{"blue color", "bright and open", "soft clouds"},
                                                       {"green blades", "textured ground", "natural growth"},
                                                       {"grey asphalt", "painted lines", "flat surface"}};
  std::vector<AttributeSet> sets;
  for (std::size_t j = 0; j < 3; ++j) sets.push_back(embed_attributes(vocab.names[j], attrs[j], te));
  int decreased = 0, bad_trace = 0;
  const int runs = 50;
  for (int s = 0; s < runs; ++s) {
    SegTTOConfig cfg;
    cfg.rng_seed = s;
    auto job = oracle_job(detail::three_region_image(64, 1000 + s), ie, te, dec, vocab, cfg);
    job.attributes = sets;
    const auto res = segment_image(job);
    if (res.visual.rows() != 16 || res.visual.cols() != 16) return {false, "feature grid is not 16x16"};
    if (res.trace.steps.size() != 5) ++bad_trace;
    if (*res.trace.final_ssl <= *res.trace.initial_ssl) ++decreased;
  }
  const double rate = static_cast<double>(decreased) / runs;
  std::string detail = std::to_string(decreased) + "/" + std::to_string(runs) + " runs decreased";
  if (bad_trace) return {false, std::to_string(bad_trace) + " traces without 5 records"};
  return {rate >= 0.95, detail};
}

// ----------------------------------------------------------- determinism

inline Outcome check_determinism(const Options& opts) {
  if (!opts.evaluate) return {false, "no evaluate runner"};
  const fs::path root = fs::path(opts.fixture_dir) / "oracle3";
  const fs::path tmp = fs::temp_directory_path() /
                       ("segtto_det_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  const fs::path a = tmp / "a", b = tmp / "b";
  for (const auto& out : {a, b}) {
    const int code = opts.evaluate({"evaluate", "--dataset", root.string(), "--output", out.string(), "--config",
                                    (root / "segtto.conf").string(), "--seed", "3", "--offline"});
    if (code != 0) {
      fs::remove_all(tmp);
      return {false, "evaluate exited with " + std::to_string(code)};
    }
  }
  Outcome res{true, ""};
  int masks = 0;
  for (const auto& e : fs::directory_iterator(a / "pred")) {
    ++masks;
    if (detail::read_file(e.path()) != detail::read_file(b / "pred" / e.path().filename()))
      res = {false, "mask " + e.path().filename().string() + " differs"};
  }
  for (const char* f : {"summary.json", "per_image.jsonl"})
    if (detail::read_file(a / f) != detail::read_file(b / f)) res = {false, std::string(f) + " differs"};
  if (res.passed) {
    const auto summary = nlohmann::json::parse(detail::read_file(a / "summary.json"));
    res.detail = std::to_string(masks) + " masks identical, mIoU " + summary.at("miou").dump();
    if (masks != 3) res = {false, "expected 3 masks, found " + std::to_string(masks)};
  }
  fs::remove_all(tmp);
  return res;
}

// ------------------------------------------------------ prompt fidelity

/// Counts calls and never answers; a completed run with zero calls shows
/// the cache served everything.
class CountingClient : public LlmClient {
 public:
  std::string complete(const LLMPrompt&) override {
    ++calls;
    throw RetrievalError("network access attempted");
  }
  std::string identifier() const override { return "counting"; }
  int calls = 0;
};

inline Outcome check_prompt_fidelity(const Options& opts) {
  const fs::path root = fs::path(opts.fixture_dir) / "prompts";
  struct Golden {
    const char* dataset;
    std::size_t index;
    const char* text;
  };
  const Golden goldens[] = {
      {"deepcrack", 1,
       "Q: What are useful visual attributes for distinguishing a crack from concrete or asphalt in a photo?\n"
       "A: There are several useful visual attributes to tell there is a crack in a photo:\n-"},
      {"deepcrack", 0,
       "Q: What are useful visual attributes for distinguishing a concrete or asphalt from crack in a photo?\n"
       "A: There are several useful visual attributes to tell there is a concrete or asphalt in a photo:\n-"},
      {"foodseg103", 0,
       "Q: What are useful visual attributes for distinguishing a background of food from "
       "candy,egg tart,french fries,chocolate,biscuit,popcorn in a photo of food?\n"
       "A: There are several useful visual attributes to tell there is a background of food in a photo of food:\n-"},
      {"foodseg103", 2,
       "Q: What are useful visual attributes for distinguishing a egg tart from "
       "background,candy,french fries,chocolate,biscuit,popcorn in a photo of food?\n"
       "A: There are several useful visual attributes to tell there is a egg tart in a photo of food:\n-"},
      {"kvasir", 1,
       "Q: What are useful visual attributes for distinguishing a endoscopic grasping tool from others in a photo?\n"
       "A: There are several useful visual attributes to tell there is a endoscopic grasping tool in a photo:\n-"},
      {"kvasir", 0,
       "Q: What are useful visual attributes for distinguishing a gastrointestinal (GI) tract tissue from tool in a "
       "photo?\n"
       "A: There are several useful visual attributes to tell there is a gastrointestinal (GI) tract tissue in a "
       "photo:\n-"},
  };
  for (const auto& g : goldens) {
    const auto vocab = load_vocabulary(root / g.dataset / "vocab.txt");
    if (build_llm_prompt(vocab, g.index).rendered != g.text)
      return {false, std::string(g.dataset) + " prompt " + std::to_string(g.index) + " differs from golden"};
  }
  OracleTextEncoder enc(32, 0);
  int categories = 0;
  for (const char* ds : {"deepcrack", "foodseg103", "kvasir"}) {
    const auto vocab = load_vocabulary(root / ds / "vocab.txt");
    AttributeCache cache(root / ds / "attributes.json");
    CountingClient client;
    const auto sets = prepare_attributes(vocab, cache, &client, ds, enc);
    const auto offline = prepare_attributes(vocab, cache, nullptr, ds, enc);
    if (client.calls != 0) return {false, std::string(ds) + " made " + std::to_string(client.calls) + " calls"};
    if (sets != offline) return {false, "offline sets differ"};
    categories += static_cast<int>(sets.size());
  }
  return {true, std::to_string(std::size(goldens)) + " goldens, " + std::to_string(categories) +
                    " categories served offline with 0 calls"};
}

inline Outcome check_real_backend(const Options&) {
  Outcome o;
  o.skipped = true;
  o.passed = true;
  o.detail = "no pretrained encoder adapter configured";
  return o;
}

inline std::vector<Criterion> criteria() {
  return {
      {"pcgrad suite", 5.0, true, check_pcgrad},
      {"objective suite", 30.0, true, check_objective},
      {"selection oracle", 5.0, true, check_selection},
      {"vfa oracle", 30.0, true, check_vfa},
      {"attribute math", 0.0, true, check_attribute_math},
      {"plug-in property", 0.0, true, check_plugin},
      {"end-to-end tto behavior", 10.0, true, check_end_to_end},
      {"determinism", 0.0, true, check_determinism},
      {"attribute prompt fidelity", 0.0, true, check_prompt_fidelity},
      {"real-backend smoke (non-gating)", 0.0, false, check_real_backend},
  };
}

/// Runs every criterion, printing one line each. Returns true when every
/// gating criterion passed.
inline bool run_all(const Options& opts, std::ostream& out) {
  bool ok = true;
  for (const auto& c : criteria()) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(opts);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.passed && c.time_limit_seconds > 0 && secs >= c.time_limit_seconds) {
      o.passed = false;
      o.detail += "; exceeded " + detail::fmt("%.0f", c.time_limit_seconds) + " s";
    }
    const char* tag = o.skipped ? "SKIP" : (o.passed ? "PASS" : "FAIL");
    out << tag << "  " << c.name << "  (" << o.detail << "; " << detail::fmt("%.2f", secs) << " s)\n";
    if (c.gating && !o.passed) ok = false;
  }
  return ok;
}

}  // namespace segtto::selftest
