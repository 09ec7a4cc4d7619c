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

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "segtto/backend.hpp"
#include "segtto/config.hpp"
#include "segtto/core.hpp"
#include "segtto/error.hpp"
#include "segtto/templates.hpp"
#include "segtto/tensor.hpp"

namespace segtto {

/// Question/answer scaffold asking an LLM for distinguishing visual
/// attributes of one category.
struct LLMPrompt {
  std::string rendered;
  std::string category;
  std::vector<std::string> other_categories;
  std::string image_type;

  /// Content hash of the rendered text, as 16 lowercase hex digits.
  std::string fingerprint() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(rendered)));
    return buf;
  }
};

/// The category's description (when present) stands in for its name; the
/// contrast list is the other categories' names joined by ','.
inline LLMPrompt build_llm_prompt(const CategoryVocabulary& vocab, std::size_t j) {
  if (j >= vocab.size()) throw ArgumentError("build_llm_prompt: category index out of range");
  if (vocab.names[j].empty()) throw ArgumentError("build_llm_prompt: empty category name");
  LLMPrompt p;
  p.category = vocab.names[j];
  p.image_type = vocab.image_type;
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (i != j) p.other_categories.push_back(vocab.names[i]);
  const std::string& name = vocab.display_name(j);
  std::string others;
  for (std::size_t i = 0; i < p.other_categories.size(); ++i) others += (i ? "," : "") + p.other_categories[i];
  p.rendered = "Q: What are useful visual attributes for distinguishing a " + name;
  if (!p.other_categories.empty()) p.rendered += " from " + others;
  p.rendered += " in a " + p.image_type + "?\n";
  p.rendered += "A: There are several useful visual attributes to tell there is a " + name + " in a " +
                p.image_type + ":\n-";
  return p;
}

/// Pulls `- item` bullet lines out of an LLM answer: trimmed, empty and
/// duplicate items dropped, at most `cap` kept.
inline std::vector<std::string> parse_attribute_response(const std::string& raw, std::size_t cap = 15) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  std::istringstream in(raw);
  std::string line;
  while (std::getline(in, line) && out.size() < cap) {
    std::string t = detail::trim(line);
    if (t.empty() || t[0] != '-') continue;
    t = detail::trim(std::string_view(t).substr(1));
    if (t.empty() || !seen.insert(t).second) continue;
    out.push_back(std::move(t));
  }
  return out;
}

struct AttributeSet {
  std::string category;
  std::vector<std::string> attributes;
  std::vector<Vec> embeddings;  // unit norm, one per attribute
  std::vector<double> weights;  // relevance to the category; empty until weighted
  bool operator==(const AttributeSet&) const = default;
};

inline AttributeSet embed_attributes(const std::string& category, std::vector<std::string> attributes,
                                     const TextEncoder& encoder) {
  AttributeSet set{category, std::move(attributes), {}, {}};
  for (const auto& a : set.attributes) set.embeddings.push_back(normalized(encode_text(encoder, a).values));
  return set;
}

/// Weights every attribute by its cosine similarity to the category's
/// learned embedding. Negative similarities are kept.
inline AttributeSet weight_attributes(AttributeSet set, std::span<const double> category_embedding) {
  set.weights.clear();
  for (const auto& e : set.embeddings) set.weights.push_back(cosine(e, category_embedding));
  return set;
}

inline constexpr double kDegenerateAttributeNorm = 1e-8;

/// Relevance-weighted sum of attribute embeddings, renormalized to unit
/// length.
inline Vec aggregate_attributes(const AttributeSet& attrs) {
  if (attrs.embeddings.empty()) throw ArgumentError("aggregate_attributes: no attributes");
  if (attrs.weights.size() != attrs.embeddings.size())
    throw ArgumentError("aggregate_attributes: attributes are not weighted");
  Vec sum(attrs.embeddings.front().size(), 0.0);
  for (std::size_t r = 0; r < attrs.embeddings.size(); ++r)
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += attrs.weights[r] * attrs.embeddings[r][i];
  const double n = norm(sum);
  if (!(n > kDegenerateAttributeNorm))
    throw DegenerateAggregationError("attribute weights cancel out for '" + attrs.category + "'");
  for (auto& v : sum) v /= n;
  return sum;
}

/// Normalized mean of a category's tuned prompt embeddings.
inline Vec category_reference(std::span<const TextEmbedding> tuned) {
  if (tuned.empty()) throw ArgumentError("category_reference: no embeddings");
  Vec mean(tuned.front().values.size(), 0.0);
  for (const auto& t : tuned)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += t.values[i];
  return normalized(mean);
}

/// f = (beta / p) * sum_k b_k + (1 - beta) * attr. With beta = 1 this is
/// exactly the prompt mean used by the untuned baseline.
inline TextEmbedding mix_text_embedding(std::span<const TextEmbedding> tuned, std::span<const double> attr_vec,
                                        double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ArgumentError("mix_text_embedding: beta must lie in [0,1]");
  if (tuned.empty()) throw ArgumentError("mix_text_embedding: no tuned embeddings");
  const std::size_t d = tuned.front().values.size();
  if (!attr_vec.empty() && attr_vec.size() != d) throw ArgumentError("mix_text_embedding: dimension mismatch");
  Vec sum(d, 0.0);
  for (const auto& t : tuned) {
    if (t.values.size() != d) throw ArgumentError("mix_text_embedding: dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) sum[i] += t.values[i];
  }
  const double scale = beta / static_cast<double>(tuned.size());
  TextEmbedding out{Vec(d), tuned.front().label, false};
  for (std::size_t i = 0; i < d; ++i) {
    out.values[i] = scale * sum[i];
    if (!attr_vec.empty()) out.values[i] += (1.0 - beta) * attr_vec[i];
  }
  return out;
}

/// Untuned category embedding: the plain prompt mean.
inline TextEmbedding prompt_mean(std::span<const TextEmbedding> tuned) { return mix_text_embedding(tuned, {}, 1.0); }

inline constexpr std::size_t kTemplatePoolSize = 80;

/// Fixed-width variant for decoders that consume one embedding per
/// template: beta * (tuned || frozen) + (1 - beta) * per-template attribute
/// embeddings, always 80 wide.
inline std::vector<TextEmbedding> concat_variant(std::span<const TextEmbedding> tuned,
                                                 std::span<const TextEmbedding> frozen,
                                                 std::span<const Vec> attribute_templates, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ArgumentError("concat_variant: beta must lie in [0,1]");
  if (tuned.size() + frozen.size() != kTemplatePoolSize)
    throw ArgumentError("concat_variant: tuned + frozen templates must number 80");
  if (attribute_templates.size() != kTemplatePoolSize)
    throw ArgumentError("concat_variant: attribute template pool must number 80");
  std::vector<TextEmbedding> out;
  out.reserve(kTemplatePoolSize);
  for (std::size_t k = 0; k < kTemplatePoolSize; ++k) {
    const TextEmbedding& base = k < tuned.size() ? tuned[k] : frozen[k - tuned.size()];
    const Vec& attr = attribute_templates[k];
    if (attr.size() != base.values.size()) throw ArgumentError("concat_variant: dimension mismatch");
    TextEmbedding e{Vec(attr.size()), base.label, false};
    for (std::size_t i = 0; i < attr.size(); ++i) e.values[i] = beta * base.values[i] + (1.0 - beta) * attr[i];
    out.push_back(std::move(e));
  }
  return out;
}

/// Aggregated attribute embedding under each template: attributes are
/// inserted into template k, embedded, weighted against the category
/// reference, and aggregated.
inline std::vector<Vec> attribute_template_embeddings(const AttributeSet& attrs, const TextEncoder& encoder,
                                                      std::span<const double> category_ref,
                                                      const std::vector<std::string>& templates = imagenet_templates()) {
  std::vector<Vec> out;
  out.reserve(templates.size());
  for (const auto& t : templates) {
    std::vector<std::string> filled;
    for (const auto& a : attrs.attributes) filled.push_back(fill_template(t, a));
    AttributeSet templated = embed_attributes(attrs.category, std::move(filled), encoder);
    out.push_back(aggregate_attributes(weight_attributes(std::move(templated), category_ref)));
  }
  return out;
}

/// Chat-completion style endpoint returning the raw answer text.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const LLMPrompt& prompt) = 0;
  virtual std::string identifier() const = 0;
};

/// Serves canned answers keyed by category name; for reproducible runs.
class ReplayLlmClient : public LlmClient {
 public:
  explicit ReplayLlmClient(std::map<std::string, std::string> by_category, std::string id = "replay")
      : responses_(std::move(by_category)), id_(std::move(id)) {}

  static ReplayLlmClient from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open replay file '" + path + "'");
    const auto doc = nlohmann::json::parse(in);
    return ReplayLlmClient(doc.at("responses").get<std::map<std::string, std::string>>(),
                           doc.value("llm", std::string("replay")));
  }

  /// Answers are matched by the category the prompt asks about.
  std::string complete(const LLMPrompt& prompt) override {
    ++calls_;
    const auto it = responses_.find(prompt.category);
    if (it == responses_.end()) throw RetrievalError("replay has no answer for '" + prompt.category + "'");
    return it->second;
  }
  std::string identifier() const override { return id_; }
  int calls() const { return calls_; }

 private:
  std::map<std::string, std::string> responses_;
  std::string id_;
  int calls_ = 0;
};

struct AttributeCacheEntry {
  std::string dataset;
  std::string category;
  std::string fingerprint;
  std::string llm;
  std::string created_at;
  std::vector<std::string> attributes;
  bool operator==(const AttributeCacheEntry&) const = default;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Attribute strings keyed by (dataset, category, prompt fingerprint),
/// persisted as one JSON document. Reads share a lock; writes are
/// exclusive and saved by atomic rename.
class AttributeCache {
 public:
  AttributeCache() = default;
  explicit AttributeCache(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) load();
  }
  AttributeCache(const AttributeCache& o) : path_(o.path_), entries_(o.entries_) {}

  std::optional<AttributeCacheEntry> find(const std::string& dataset, const std::string& category,
                                          const std::string& fingerprint) const {
    std::shared_lock lock(mu_);
    const auto it = entries_.find({dataset, category, fingerprint});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(AttributeCacheEntry e) {
    std::unique_lock lock(mu_);
    auto key = std::make_tuple(e.dataset, e.category, e.fingerprint);
    entries_[std::move(key)] = std::move(e);
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
  }

  nlohmann::json to_json() const {
    std::shared_lock lock(mu_);
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [key, e] : entries_)
      entries.push_back({{"dataset", e.dataset},
                         {"category", e.category},
                         {"fingerprint", e.fingerprint},
                         {"llm", e.llm},
                         {"timestamp", e.created_at},
                         {"attributes", e.attributes}});
    return {{"format", "segtto-attribute-cache/1"}, {"entries", entries}};
  }

  void from_json(const nlohmann::json& doc) {
    std::unique_lock lock(mu_);
    entries_.clear();
    for (const auto& j : doc.at("entries")) {
      AttributeCacheEntry e{j.at("dataset").get<std::string>(),     j.at("category").get<std::string>(),
                            j.at("fingerprint").get<std::string>(), j.value("llm", std::string()),
                            j.value("timestamp", std::string()),    j.at("attributes").get<std::vector<std::string>>()};
      entries_[{e.dataset, e.category, e.fingerprint}] = std::move(e);
    }
  }

  void load() {
    std::ifstream in(path_);
    if (!in) throw RetrievalError("cannot read attribute cache '" + path_.string() + "'");
    try {
      from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("malformed attribute cache '" + path_.string() + "': " + e.what(), "");
    }
  }

  void save() const {
    if (path_.empty()) return;
    const std::string text = to_json().dump(2) + "\n";
    std::unique_lock lock(mu_);
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    const auto tmp = path_.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << text;
      if (!out) throw Error("cannot write attribute cache '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path_);
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::map<std::tuple<std::string, std::string, std::string>, AttributeCacheEntry> entries_;
  mutable std::shared_mutex mu_;
};

/// Cache lookup first; on a miss, asks the client (null means offline),
/// parses the bullets, stores the strings, and embeds them.
inline AttributeSet fetch_attributes(const LLMPrompt& prompt, LlmClient* client, AttributeCache& cache,
                                     const std::string& dataset, const TextEncoder& encoder, std::size_t cap = 15) {
  const std::string fp = prompt.fingerprint();
  if (auto hit = cache.find(dataset, prompt.category, fp))
    return embed_attributes(prompt.category, hit->attributes, encoder);
  if (client == nullptr)
    throw RetrievalError("no cached attributes for '" + prompt.category + "' and no LLM endpoint available");
  std::string raw;
  try {
    raw = client->complete(prompt);
  } catch (const RetrievalError&) {
    throw;
  } catch (const std::exception& e) {
    throw RetrievalError("LLM request for '" + prompt.category + "' failed: " + e.what());
  }
  std::vector<std::string> attrs = parse_attribute_response(raw, cap);
  if (attrs.empty()) throw ParseError("LLM answer for '" + prompt.category + "' has no bullet attributes", raw);
  cache.put({dataset, prompt.category, fp, client->identifier(), utc_timestamp(), attrs});
  return embed_attributes(prompt.category, std::move(attrs), encoder);
}

}  // namespace segtto
