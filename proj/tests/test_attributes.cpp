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
#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>
#include <thread>

#include "segtto/attributes.hpp"
#include "segtto/llm_http.hpp"
#include "segtto/oracle.hpp"

namespace segtto {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "segtto_attr_tests";
  fs::create_directories(dir);
  return dir / (name + "_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
}

TEST(LlmPrompt, DeepCrackContrast) {
  CategoryVocabulary v({"concrete or asphalt", "crack"});
  const LLMPrompt p = build_llm_prompt(v, 1);
  EXPECT_NE(p.rendered.find("distinguishing a crack from concrete or asphalt in a photo"), std::string::npos);
  EXPECT_EQ(p.category, "crack");
  EXPECT_EQ(p.other_categories, std::vector<std::string>{"concrete or asphalt"});
}

TEST(LlmPrompt, ExactTemplate) {
  CategoryVocabulary v({"a", "b", "c"});
  EXPECT_EQ(build_llm_prompt(v, 1).rendered,
            "Q: What are useful visual attributes for distinguishing a b from a,c in a photo?\n"
            "A: There are several useful visual attributes to tell there is a b in a photo:\n-");
}

TEST(LlmPrompt, ImageTypeAndDescription) {
  CategoryVocabulary food({"background", "candy"}, "photo of food");
  food.descriptions[0] = "background of food";
  const LLMPrompt p = build_llm_prompt(food, 0);
  EXPECT_NE(p.rendered.find("distinguishing a background of food from candy in a photo of food?"), std::string::npos);
  EXPECT_NE(p.rendered.find("tell there is a background of food in a photo of food:"), std::string::npos);
  // Other categories' prompts list the plain name.
  EXPECT_NE(build_llm_prompt(food, 1).rendered.find("from background in"), std::string::npos);

  CategoryVocabulary kvasir({"others", "tool"});
  kvasir.descriptions[1] = "endoscopic grasping tool";
  EXPECT_NE(build_llm_prompt(kvasir, 1).rendered.find("distinguishing a endoscopic grasping tool from others"),
            std::string::npos);
}

TEST(LlmPrompt, SingleCategoryOmitsContrast) {
  CategoryVocabulary v({"crack"});
  EXPECT_EQ(build_llm_prompt(v, 0).rendered,
            "Q: What are useful visual attributes for distinguishing a crack in a photo?\n"
            "A: There are several useful visual attributes to tell there is a crack in a photo:\n-");
}

TEST(LlmPrompt, ErrorsAndFingerprint) {
  CategoryVocabulary v({"a", "b"});
  EXPECT_THROW(build_llm_prompt(v, 2), ArgumentError);
  v.names[0].clear();
  EXPECT_THROW(build_llm_prompt(v, 0), ArgumentError);
  CategoryVocabulary w({"a", "b"});
  const std::string fp = build_llm_prompt(w, 0).fingerprint();
  EXPECT_EQ(fp.size(), 16u);
  EXPECT_EQ(fp, build_llm_prompt(w, 0).fingerprint());
  EXPECT_NE(fp, build_llm_prompt(w, 1).fingerprint());
}

TEST(ParseResponse, Bullets) {
  EXPECT_EQ(parse_attribute_response("- long trunk\n- large ears\n"),
            (std::vector<std::string>{"long trunk", "large ears"}));
  EXPECT_EQ(parse_attribute_response("Sure!\n-  grey skin \n\n- grey skin\n-\n* not a dash\n  - tusks"),
            (std::vector<std::string>{"grey skin", "tusks"}));
  EXPECT_EQ(parse_attribute_response("- a\n- b\n- c\n- d", 2), (std::vector<std::string>{"a", "b"}));
  EXPECT_TRUE(parse_attribute_response("no bullets here").empty());
}

class ScriptedClient : public LlmClient {
 public:
  explicit ScriptedClient(std::string answer) : answer_(std::move(answer)) {}
  std::string complete(const LLMPrompt& p) override {
    ++calls;
    last_prompt = p.rendered;
    return answer_;
  }
  std::string identifier() const override { return "scripted"; }
  int calls = 0;
  std::string last_prompt;

 private:
  std::string answer_;
};

TEST(FetchAttributes, MissQueriesThenHits) {
  OracleTextEncoder enc(8);
  CategoryVocabulary v({"elephant", "horse"});
  const LLMPrompt p = build_llm_prompt(v, 0);
  AttributeCache cache;
  ScriptedClient client("- long trunk\n- large ears\n- long trunk\n");
  const AttributeSet first = fetch_attributes(p, &client, cache, "zoo", enc);
  EXPECT_EQ(client.calls, 1);
  EXPECT_EQ(client.last_prompt, p.rendered);
  EXPECT_EQ(first.attributes, (std::vector<std::string>{"long trunk", "large ears"}));
  ASSERT_EQ(first.embeddings.size(), 2u);
  EXPECT_NEAR(norm(first.embeddings[0]), 1.0, 1e-12);
  const AttributeSet second = fetch_attributes(p, &client, cache, "zoo", enc);
  EXPECT_EQ(client.calls, 1);
  EXPECT_EQ(second, first);
  // Another dataset key misses.
  fetch_attributes(p, &client, cache, "safari", enc);
  EXPECT_EQ(client.calls, 2);
}

TEST(FetchAttributes, OfflineMissIsRetrievalError) {
  OracleTextEncoder enc(8);
  CategoryVocabulary v({"a", "b"});
  AttributeCache cache;
  EXPECT_THROW(fetch_attributes(build_llm_prompt(v, 0), nullptr, cache, "d", enc), RetrievalError);
}

TEST(FetchAttributes, EmptyAnswerIsParseErrorWithRaw) {
  OracleTextEncoder enc(8);
  CategoryVocabulary v({"a", "b"});
  AttributeCache cache;
  ScriptedClient client("I cannot help with that.");
  try {
    fetch_attributes(build_llm_prompt(v, 0), &client, cache, "d", enc);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.raw_response(), "I cannot help with that.");
  }
  EXPECT_EQ(cache.size(), 0u);
}

TEST(AttributeCache, SaveLoadRoundTrip) {
  const fs::path path = temp_path("cache.json");
  {
    AttributeCache cache(path);
    cache.put({"ds", "crack", "00ff", "m", "2026-01-01T00:00:00Z", {"thin line", "dark"}});
    cache.put({"ds", "road", "0a0b", "m", "2026-01-01T00:00:00Z", {"grey"}});
    cache.save();
  }
  AttributeCache loaded(path);
  EXPECT_EQ(loaded.size(), 2u);
  const auto hit = loaded.find("ds", "crack", "00ff");
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(hit->attributes, (std::vector<std::string>{"thin line", "dark"}));
  EXPECT_FALSE(loaded.find("ds", "crack", "ffff").has_value());
  EXPECT_EQ(loaded.to_json().at("format"), "segtto-attribute-cache/1");
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
}

TEST(AttributeCache, MalformedFileIsParseError) {
  const fs::path path = temp_path("bad.json");
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(AttributeCache{path}, ParseError);
}

TEST(AttributeCache, MissingFileStartsEmpty) {
  AttributeCache cache(temp_path("absent.json"));
  EXPECT_EQ(cache.size(), 0u);
}

TEST(ReplayClient, AnswersByCategory) {
  ReplayLlmClient client({{"crack", "- thin"}}, "replay-x");
  CategoryVocabulary v({"crack", "road"});
  EXPECT_EQ(client.complete(build_llm_prompt(v, 0)), "- thin");
  EXPECT_THROW(client.complete(build_llm_prompt(v, 1)), RetrievalError);
  EXPECT_EQ(client.calls(), 2);
  EXPECT_EQ(client.identifier(), "replay-x");
}

AttributeSet manual_set(std::vector<Vec> embeddings, std::vector<double> weights) {
  AttributeSet s{"c", {}, std::move(embeddings), std::move(weights)};
  s.attributes.resize(s.embeddings.size(), "x");
  return s;
}

TEST(Aggregate, HandCases) {
  const Vec e1{1, 0, 0}, e2{0, 1, 0};
  const Vec single = aggregate_attributes(manual_set({{0, 3, 4}}, {-0.2}));
  EXPECT_NEAR(single[1], -0.6, 1e-15);
  EXPECT_NEAR(single[2], -0.8, 1e-15);
  EXPECT_EQ(aggregate_attributes(manual_set({e1, e1}, {0.5, 0.5})), e1);
  const Vec both = aggregate_attributes(manual_set({e1, e2}, {0.3, 0.3}));
  EXPECT_NEAR(both[0], 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(both[1], 1 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(both[2], 0.0);
}

TEST(Aggregate, DegenerateAndInvalid) {
  const Vec e1{1, 0};
  EXPECT_THROW(aggregate_attributes(manual_set({e1, e1}, {0.5, -0.5})), DegenerateAggregationError);
  EXPECT_THROW(aggregate_attributes(manual_set({}, {})), ArgumentError);
  EXPECT_THROW(aggregate_attributes(manual_set({e1}, {})), ArgumentError);
}

TEST(Aggregate, WeightsAreCosinesToReference) {
  OracleTextEncoder enc(8, 2);
  const AttributeSet s = weight_attributes(embed_attributes("c", {"red", "round shape"}, enc), Vec(8, 1.0));
  ASSERT_EQ(s.weights.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(s.weights[r], cosine(s.embeddings[r], Vec(8, 1.0)), 1e-15);
}

TEST(Mix, HandCasesAndBoundaries) {
  const std::vector<TextEmbedding> tuned = {{{1, 0}, "c", true}};
  const Vec attr{0, 1};
  EXPECT_EQ(mix_text_embedding(tuned, attr, 0.5).values, (Vec{0.5, 0.5}));
  EXPECT_EQ(mix_text_embedding(tuned, attr, 0.0).values, attr);
  const std::vector<TextEmbedding> many = {{{1, 2}, "c", true}, {{3, -2}, "c", true}, {{0.5, 0.25}, "c", true}};
  const Vec m1 = mix_text_embedding(many, attr, 1.0).values;
  EXPECT_EQ(m1, prompt_mean(many).values);
  EXPECT_NEAR(m1[0], 4.5 / 3, 1e-15);
  EXPECT_THROW(mix_text_embedding(tuned, attr, 1.5), ArgumentError);
  EXPECT_THROW(mix_text_embedding(tuned, attr, -0.1), ArgumentError);
  EXPECT_THROW(mix_text_embedding(tuned, Vec{1, 2, 3}, 0.5), ArgumentError);
}

TEST(Concat, WidthAndBoundaries) {
  OracleTextEncoder enc(6);
  const auto& templates = imagenet_templates();
  ASSERT_EQ(templates.size(), 80u);
  std::vector<TextEmbedding> all;
  for (const auto& t : templates) all.push_back(encode_text(enc, fill_template(t, "crack")));
  const std::vector<Vec> attr(80, Vec(6, 0.1));
  for (std::size_t p : {1u, 5u, 40u, 80u}) {
    const std::span<const TextEmbedding> tuned(all.data(), p), frozen(all.data() + p, 80 - p);
    const auto out = concat_variant(tuned, frozen, attr, 1.0);
    ASSERT_EQ(out.size(), 80u);
    for (std::size_t k = 0; k < 80; ++k) EXPECT_EQ(out[k].values, all[k].values);
  }
  const auto half = concat_variant(std::span<const TextEmbedding>(all), {}, attr, 0.5);
  EXPECT_NEAR(half[3].values[2], 0.5 * all[3].values[2] + 0.05, 1e-15);
  EXPECT_THROW(concat_variant(std::span<const TextEmbedding>(all.data(), 5), {}, attr, 0.5), ArgumentError);
  EXPECT_THROW(concat_variant(std::span<const TextEmbedding>(all), {}, std::vector<Vec>(79, Vec(6)), 0.5),
               ArgumentError);
}

TEST(Concat, AttributeTemplateEmbeddings) {
  OracleTextEncoder enc(6);
  const AttributeSet s = embed_attributes("crack", {"thin dark line", "branching"}, enc);
  const auto per_template = attribute_template_embeddings(s, enc, Vec(6, 1.0));
  ASSERT_EQ(per_template.size(), 80u);
  for (const auto& v : per_template) EXPECT_NEAR(norm(v), 1.0, 1e-12);
}

TEST(HttpClient, PostsChatRequestAndReadsContent) {
  httplib::Server server;
  std::string seen_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_body = req.body;
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"- striped fur\n- long tail"}}]})",
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpChatClient client("http://127.0.0.1:" + std::to_string(port), "test-model");
  CategoryVocabulary v({"tiger", "lion"});
  const LLMPrompt p = build_llm_prompt(v, 0);
  const std::string answer = client.complete(p);
  server.stop();
  t.join();

  EXPECT_EQ(parse_attribute_response(answer), (std::vector<std::string>{"striped fur", "long tail"}));
  const auto body = nlohmann::json::parse(seen_body);
  EXPECT_EQ(body.at("model"), "test-model");
  EXPECT_EQ(body.at("messages").at(0).at("content"), p.rendered);
  EXPECT_EQ(client.identifier(), "test-model");
}

TEST(HttpClient, UnreachableIsRetrievalError) {
  HttpChatClient client("http://127.0.0.1:1", "m");
  CategoryVocabulary v({"a", "b"});
  EXPECT_THROW(client.complete(build_llm_prompt(v, 0)), RetrievalError);
}

}  // namespace
}  // namespace segtto
