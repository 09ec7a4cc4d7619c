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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "segtto/attributes.hpp"
#include "segtto/dataset.hpp"
#include "segtto/image_io.hpp"
#include "segtto/llm_http.hpp"
#include "segtto/oracle.hpp"
#include "segtto/pipeline.hpp"
#include "segtto/selftest.hpp"

namespace segtto::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitJobError = 1;
inline constexpr int kExitUsage = 2;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::int64_t> seed;
  std::string vocab_path;
  bool offline = false;
  std::string dump_views;
  std::string dump_counts;
  std::string dump_losses;
  std::string trace_path;
  bool fallback_baseline = false;
  std::string attribute_cache;
  std::string dataset_id;
  std::string llm_replay;
  int oracle_dim = 32;
  std::uint64_t oracle_seed = 0;
  std::string oracle_lexicon;
};

inline void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--set", o.overrides, "config override, key=value (repeatable)");
  app->add_option("--seed", o.seed, "augmentation RNG seed (overrides rng_seed)");
  app->add_option("--vocab", o.vocab_path, "vocabulary file");
  app->add_flag("--offline", o.offline, "never contact the LLM endpoint; attribute cache must hit");
  app->add_option("--dump-views", o.dump_views, "directory for augmented view images");
  app->add_option("--dump-counts", o.dump_counts, "PNG (segment) or directory (evaluate) for VFA count maps");
  app->add_option("--dump-losses", o.dump_losses, "file for per-view selection loss maps");
  app->add_option("--trace", o.trace_path, "append per-step tuning records (JSON lines)");
  app->add_flag("--fallback-baseline", o.fallback_baseline, "decode untuned features when a stage fails");
  app->add_option("--attribute-cache", o.attribute_cache, "attribute cache JSON file");
  app->add_option("--dataset-id", o.dataset_id, "dataset key used in the attribute cache");
  app->add_option("--llm-replay", o.llm_replay, "JSON file of canned LLM answers keyed by category");
  app->add_option("--oracle-dim", o.oracle_dim, "embedding width of the oracle backend")->check(CLI::PositiveNumber);
  app->add_option("--oracle-seed", o.oracle_seed, "hash seed of the oracle backend");
  app->add_option("--oracle-lexicon", o.oracle_lexicon, "color-to-category lexicon for the oracle image encoder");
}

inline SegTTOConfig build_config(const CommonOptions& o) {
  SegTTOConfig cfg = o.config_path.empty() ? SegTTOConfig{} : load_config_file(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError(kv, "override must be key=value");
    apply_config_field(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (o.seed) cfg.rng_seed = *o.seed;
  return validate_config(cfg);
}

/// Oracle backend instances owned together.
struct OracleBackend {
  OracleImageEncoder image;
  OracleTextEncoder text;
  ReferenceDecoder decoder;

  OracleBackend(int dim, std::uint64_t seed) : image(dim, seed), text(static_cast<std::size_t>(dim), seed) {}

  Backends handles() const { return {&image, &text, &decoder}; }
};

/// Lexicon colors anchor at the untuned text feature their category is
/// decoded with: the prompt mean, mixed with the category's attributes when
/// the config asks for it. Names outside the vocabulary anchor at their
/// plain encoding.
inline void load_lexicon(OracleBackend& backend, const fs::path& path, const CategoryVocabulary& vocab,
                         const SegTTOConfig& cfg, const std::vector<AttributeSet>& attributes = {}) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open oracle lexicon '" + path.string() + "'");
  const PromptBank bank = make_prompt_bank(backend.text, resolve_prompts(cfg), vocab);
  const TextGrid grid = compose_text_features(bank, backend.text);
  backend.image.set_lexicon(parse_oracle_lexicon(in, [&](const std::string& name) {
    for (std::size_t j = 0; j < vocab.size(); ++j) {
      if (vocab.names[j] != name) continue;
      if (cfg.attribute_mode == AttributeMode::kPreAggregation && attributes.size() == vocab.size()) {
        const Vec attr = aggregate_attributes(weight_attributes(attributes[j], category_reference(grid[j])));
        return mix_text_embedding(grid[j], attr, cfg.mix_beta).values;
      }
      return prompt_mean(grid[j]).values;
    }
    return encode_text(backend.text, name).values;
  }));
}

inline std::unique_ptr<LlmClient> make_client(const CommonOptions& o) {
  if (o.offline) return nullptr;
  if (!o.llm_replay.empty()) return std::make_unique<ReplayLlmClient>(ReplayLlmClient::from_file(o.llm_replay));
  return HttpChatClient::from_environment();
}

inline std::vector<AttributeSet> load_attribute_sets(const CommonOptions& o, const SegTTOConfig& cfg,
                                                     const CategoryVocabulary& vocab, const TextEncoder& text,
                                                     const fs::path& default_cache, const std::string& default_id) {
  if (cfg.attribute_mode == AttributeMode::kNone) return {};
  const fs::path cache_path = o.attribute_cache.empty() ? default_cache : fs::path(o.attribute_cache);
  AttributeCache cache(cache_path);
  const std::size_t before = cache.size();
  auto client = make_client(o);
  auto sets = prepare_attributes(vocab, cache, client.get(), o.dataset_id.empty() ? default_id : o.dataset_id, text,
                                 static_cast<std::size_t>(cfg.attribute_cap));
  if (cache.size() != before) cache.save();
  return sets;
}

inline void append_trace(const fs::path& path, const std::string& image_id, const TuningTrace& trace) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot open trace file '" + path.string() + "'");
  for (const auto& r : trace.steps)
    out << nlohmann::json{{"image", image_id},
                          {"step", r.step},
                          {"loss", r.loss_name},
                          {"value", r.value},
                          {"update_norm", r.update_norm}}
               .dump()
        << "\n";
}

/// Header `segtto-lossmap <views> <rows> <cols>`, then every value in
/// view-major, row-major order.
inline void write_loss_maps(const fs::path& path, const std::vector<LossMap>& maps) {
  if (maps.empty()) return;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw Error("cannot write loss dump '" + path.string() + "'");
  std::fprintf(f, "segtto-lossmap %zu %d %d\n", maps.size(), maps.front().rows, maps.front().cols);
  for (const auto& m : maps) {
    for (std::size_t q = 0; q < m.values.size(); ++q) std::fprintf(f, q ? " %.17g" : "%.17g", m.values[q]);
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

inline void write_debug(const CommonOptions& o, const SegmentationResult& res, const std::string& id,
                        bool per_image_dirs) {
  if (!o.dump_views.empty() && res.views) {
    const fs::path dir = per_image_dirs ? fs::path(o.dump_views) / id : fs::path(o.dump_views);
    for (std::size_t i = 0; i < res.views->views.size(); ++i)
      save_image(dir / ("view_" + std::to_string(i) + ".png"), res.views->views[i].image);
  }
  if (!o.dump_counts.empty() && res.canvas) {
    const fs::path p = per_image_dirs ? fs::path(o.dump_counts) / (id + ".png") : fs::path(o.dump_counts);
    save_counts_image(p, res.canvas->rows(), res.canvas->cols(), res.canvas->counts);
  }
  if (!o.dump_losses.empty()) {
    const fs::path p = per_image_dirs ? fs::path(o.dump_losses) / (id + ".txt") : fs::path(o.dump_losses);
    write_loss_maps(p, res.selection_losses);
  }
  if (!o.trace_path.empty()) append_trace(o.trace_path, id, res.trace);
}

inline bool wants_debug(const CommonOptions& o) {
  return !o.dump_views.empty() || !o.dump_counts.empty() || !o.dump_losses.empty();
}

inline int run_segment(const CommonOptions& o, const std::string& image_path, const std::string& output,
                       std::ostream& out) {
  const SegTTOConfig cfg = build_config(o);
  const CategoryVocabulary vocab = load_vocabulary(o.vocab_path);
  OracleBackend backend(o.oracle_dim, o.oracle_seed);
  auto attributes = load_attribute_sets(o, cfg, vocab, backend.text,
                                        fs::path(image_path).parent_path() / "attributes.json", "default");
  if (!o.oracle_lexicon.empty()) load_lexicon(backend, o.oracle_lexicon, vocab, cfg, attributes);

  SegmentationJob job;
  job.image = load_image(image_path);
  job.vocab = vocab;
  job.cfg = cfg;
  job.image_encoder = &backend.image;
  job.text_encoder = &backend.text;
  job.decoder = &backend.decoder;
  job.fallback_baseline = o.fallback_baseline;
  job.keep_debug = wants_debug(o);
  job.attributes = std::move(attributes);
  const SegmentationResult res = segment_image(job);
  save_mask(output, res.mask);
  write_debug(o, res, job.image.source_id, false);

  nlohmann::json summary = {{"image", job.image.source_id},
                            {"mask", output},
                            {"rows", res.mask.rows},
                            {"cols", res.mask.cols},
                            {"kept_views", res.selection.kept_indices},
                            {"trace_steps", res.trace.steps.size()},
                            {"degraded", res.degraded}};
  if (res.trace.initial_ssl) summary["initial_ssl"] = *res.trace.initial_ssl;
  if (res.trace.final_ssl) summary["final_ssl"] = *res.trace.final_ssl;
  out << summary.dump() << "\n";
  return kExitOk;
}

inline int run_evaluate(const CommonOptions& o, const std::string& dataset, const std::string& output,
                        const std::string& csv, int jobs, std::ostream& out) {
  const SegTTOConfig cfg = build_config(o);
  const fs::path root(dataset);
  const CategoryVocabulary vocab = load_vocabulary(o.vocab_path.empty() ? root / "vocab.txt" : fs::path(o.vocab_path));
  OracleBackend backend(o.oracle_dim, o.oracle_seed);
  DatasetOptions opts;
  opts.jobs = jobs;
  opts.fallback_baseline = o.fallback_baseline;
  opts.keep_debug = wants_debug(o);
  opts.attributes = load_attribute_sets(o, cfg, vocab, backend.text, root / "attributes.json",
                                        root.filename().empty() ? root.parent_path().filename().string()
                                                                : root.filename().string());
  const fs::path lexicon = o.oracle_lexicon.empty() ? root / "oracle_lexicon.txt" : fs::path(o.oracle_lexicon);
  if (fs::exists(lexicon)) load_lexicon(backend, lexicon, vocab, cfg, opts.attributes);
  opts.on_result = [&](const std::string& id, const SegmentationResult& res) { write_debug(o, res, id, true); };
  const DatasetSummary summary = run_dataset(root, vocab, cfg, output, backend.handles(), opts);
  if (!csv.empty()) std::ofstream(csv, std::ios::trunc) << summary.report.to_csv();
  out << summary.report.to_table();
  return kExitOk;
}

inline int run_attributes(const CommonOptions& o, const std::string& cache_path, bool refresh, std::ostream& out) {
  const SegTTOConfig cfg = build_config(o);
  const CategoryVocabulary vocab = load_vocabulary(o.vocab_path);
  OracleTextEncoder text(static_cast<std::size_t>(o.oracle_dim), o.oracle_seed);
  AttributeCache target(cache_path);
  if (refresh) target.from_json({{"entries", nlohmann::json::array()}});
  auto client = make_client(o);
  const std::string id = o.dataset_id.empty() ? fs::path(o.vocab_path).parent_path().filename().string() : o.dataset_id;
  const std::size_t before = target.size();
  const auto sets = prepare_attributes(vocab, target, client.get(), id, text, static_cast<std::size_t>(cfg.attribute_cap));
  if (target.size() != before || refresh) target.save();
  for (const auto& s : sets) out << s.category << ": " << s.attributes.size() << " attributes\n";
  return kExitOk;
}

/// Entry point of the `segtto` tool. Returns 0 on success, 1 when a job
/// fails, 2 on usage errors.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Test-time optimization for open-vocabulary segmentation", "segtto"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* segment = app.add_subcommand("segment", "segment a single image");
  std::string image_path, mask_out = "pred.png";
  segment->add_option("--image", image_path, "input PNG")->required();
  segment->add_option("--output", mask_out, "output mask PNG");
  add_common(segment, common);

  auto* evaluate = app.add_subcommand("evaluate", "segment a dataset directory and report mIoU");
  std::string dataset, out_dir = "segtto_out", csv;
  int jobs = 1;
  evaluate->add_option("--dataset", dataset, "dataset root (images/, masks/, vocab.txt)")->required();
  evaluate->add_option("--output", out_dir, "output directory");
  evaluate->add_option("--emit-csv", csv, "write per-class IoU rows to this CSV file");
  evaluate->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  add_common(evaluate, common);

  auto* attributes = app.add_subcommand("attributes", "generate or refresh the attribute cache");
  std::string cache_path;
  bool refresh = false;
  attributes->add_option("--cache", cache_path, "attribute cache JSON file")->required();
  attributes->add_flag("--refresh", refresh, "ignore existing entries and query again");
  add_common(attributes, common);

  auto* selftest = app.add_subcommand("selftest", "run the property and acceptance checks");
  std::string fixtures = selftest::default_fixture_dir();
  selftest->add_option("--fixtures", fixtures, "fixture directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  if ((segment->parsed() || attributes->parsed()) && common.vocab_path.empty()) {
    err << "error: --vocab is required\n" << (segment->parsed() ? segment->help() : attributes->help());
    return kExitUsage;
  }
  try {
    if (segment->parsed()) return run_segment(common, image_path, mask_out, out);
    if (evaluate->parsed()) return run_evaluate(common, dataset, out_dir, csv, jobs, out);
    if (attributes->parsed()) return run_attributes(common, cache_path, refresh, out);
    if (selftest->parsed()) {
      selftest::Options opts;
      opts.fixture_dir = fixtures;
      opts.evaluate = [](const std::vector<std::string>& args) {
        std::vector<const char*> argv2{"segtto"};
        for (const auto& a : args) argv2.push_back(a.c_str());
        std::ostringstream sink;
        return cli_main(static_cast<int>(argv2.size()), argv2.data(), sink, sink);
      };
      return selftest::run_all(opts, out) ? kExitOk : kExitJobError;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitJobError;
  }
  return kExitUsage;
}

}  // namespace segtto::cli
