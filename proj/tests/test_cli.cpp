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
#include <filesystem>
#include <fstream>
#include <sstream>

#include "segtto/cli.hpp"

namespace segtto {
namespace {

namespace fs = std::filesystem;

const fs::path kFixtures(SEGTTO_FIXTURE_DIR);
const fs::path kOracle = kFixtures / "oracle3";

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  std::vector<const char*> argv{"segtto"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "segtto_cli_tests" /
                   (name + "_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

TEST(Cli, HelpExitsZero) {
  const CliRun r = run({"segment", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--vocab"), std::string::npos);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"segment", "--image", (kOracle / "images" / "img0.png").string()}).code, 2);
  EXPECT_EQ(run({"segment", "--bogus"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  const CliRun bad_cfg = run({"evaluate", "--dataset", kOracle.string(), "--set", "mix_beta=3", "--offline"});
  EXPECT_EQ(bad_cfg.code, 2);
  EXPECT_NE(bad_cfg.err.find("mix_beta"), std::string::npos);
}

TEST(Cli, EvaluateFixtureIsPerfect) {
  const auto out = fresh_dir("eval");
  const CliRun r = run({"evaluate", "--dataset", kOracle.string(), "--output", out.string(), "--offline", "--emit-csv",
                     (out / "iou.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("100.00"), std::string::npos);
  const auto summary = nlohmann::json::parse(std::ifstream(out / "summary.json"));
  EXPECT_EQ(summary.at("miou"), 1.0);
  EXPECT_EQ(summary.at("images"), 3);
  EXPECT_EQ(lines(out / "iou.csv").size(), 4u);
  EXPECT_EQ(config_from_report(summary), SegTTOConfig{});
}

TEST(Cli, EvaluateSeedChangesViewsNotDeterminism) {
  const auto a = fresh_dir("s1"), b = fresh_dir("s2");
  ASSERT_EQ(run({"evaluate", "--dataset", kOracle.string(), "--output", a.string(), "--offline", "--seed", "1"}).code, 0);
  ASSERT_EQ(run({"evaluate", "--dataset", kOracle.string(), "--output", b.string(), "--offline", "--seed", "2"}).code, 0);
  EXPECT_NE(lines(a / "per_image.jsonl"), lines(b / "per_image.jsonl"));
}

TEST(Cli, SegmentWithDebugOutputs) {
  const auto out = fresh_dir("seg");
  const CliRun r = run({"segment", "--image", (kOracle / "images" / "img1.png").string(), "--vocab",
                     (kOracle / "vocab.txt").string(), "--oracle-lexicon", (kOracle / "oracle_lexicon.txt").string(),
                     "--attribute-cache", (kOracle / "attributes.json").string(), "--dataset-id", "oracle3",
                     "--offline", "--output", (out / "mask.png").string(), "--trace", (out / "trace.jsonl").string(),
                     "--dump-views", (out / "views").string(), "--dump-counts", (out / "counts.png").string(),
                     "--dump-losses", (out / "losses.txt").string(), "--set", "view_count=10"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = nlohmann::json::parse(r.out);
  EXPECT_EQ(summary.at("trace_steps"), 5);
  EXPECT_EQ(summary.at("kept_views").size(), 2u);
  EXPECT_EQ(load_mask(out / "mask.png").labels, load_mask(kOracle / "masks" / "img1.png").labels);

  const auto trace = lines(out / "trace.jsonl");
  ASSERT_EQ(trace.size(), 5u);
  const auto rec = nlohmann::json::parse(trace[4]);
  EXPECT_EQ(rec.at("image"), "img1");
  EXPECT_EQ(rec.at("step"), 2);
  EXPECT_EQ(rec.at("loss"), "ce");
  EXPECT_TRUE(rec.at("value").is_number());

  int views = 0;
  for (const auto& e : fs::directory_iterator(out / "views")) views += e.path().extension() == ".png";
  EXPECT_EQ(views, 10);
  EXPECT_EQ(load_mask(out / "counts.png").rows, 48);

  std::ifstream losses(out / "losses.txt");
  std::string tag;
  int m = 0, rows = 0, cols = 0;
  losses >> tag >> m >> rows >> cols;
  EXPECT_EQ(tag, "segtto-lossmap");
  EXPECT_EQ(m, 10);
  EXPECT_EQ(rows * cols, 144);
  double v = 0;
  int values = 0;
  while (losses >> v) ++values;
  EXPECT_EQ(values, 10 * 144);
}

TEST(Cli, OfflineCacheMissIsJobError) {
  const auto out = fresh_dir("miss");
  const CliRun r = run({"segment", "--image", (kOracle / "images" / "img0.png").string(), "--vocab",
                     (kOracle / "vocab.txt").string(), "--attribute-cache", (out / "empty.json").string(),
                     "--offline", "--output", (out / "m.png").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("no cached attributes"), std::string::npos);
}

TEST(Cli, PostAggregationWithFallbackFlag) {
  const auto out = fresh_dir("fallback");
  const CliRun r = run({"segment", "--image", (kOracle / "images" / "img0.png").string(), "--vocab",
                     (kOracle / "vocab.txt").string(), "--offline", "--set", "attribute_mode=post_aggregation",
                     "--attribute-cache", (kOracle / "attributes.json").string(), "--dataset-id", "oracle3",
                     "--fallback-baseline", "--output", (out / "m.png").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "m.png"));
}

TEST(Cli, AttributesCommandUsesReplayThenCache) {
  const auto out = fresh_dir("attr");
  const fs::path cache = out / "cache.json";
  const auto deepcrack = kFixtures / "prompts" / "deepcrack";
  const CliRun first = run({"attributes", "--vocab", (deepcrack / "vocab.txt").string(), "--cache", cache.string(),
                         "--dataset-id", "deepcrack", "--llm-replay", (deepcrack / "replay.json").string()});
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_NE(first.out.find("crack: 4 attributes"), std::string::npos);
  AttributeCache loaded(cache);
  EXPECT_EQ(loaded.size(), 2u);
  const CliRun offline = run({"attributes", "--vocab", (deepcrack / "vocab.txt").string(), "--cache", cache.string(),
                           "--dataset-id", "deepcrack", "--offline"});
  EXPECT_EQ(offline.code, 0) << offline.err;
  const CliRun refresh = run({"attributes", "--vocab", (deepcrack / "vocab.txt").string(), "--cache", cache.string(),
                           "--dataset-id", "deepcrack", "--offline", "--refresh"});
  EXPECT_EQ(refresh.code, 1);
}

TEST(Cli, ShippedCachesServeOffline) {
  for (const char* ds : {"deepcrack", "foodseg103", "kvasir"}) {
    const auto dir = kFixtures / "prompts" / ds;
    const auto out = fresh_dir(ds);
    fs::copy_file(dir / "attributes.json", out / "cache.json");
    const CliRun r = run({"attributes", "--vocab", (dir / "vocab.txt").string(), "--cache", (out / "cache.json").string(),
                       "--dataset-id", ds, "--offline"});
    EXPECT_EQ(r.code, 0) << ds << ": " << r.err;
  }
}

}  // namespace
}  // namespace segtto
