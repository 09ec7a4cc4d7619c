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

#include <cmath>
#include <random>

#include "segtto/oracle.hpp"
#include "segtto/tuning.hpp"

namespace segtto {
namespace {

struct Fixture {
  OracleTextEncoder text{12, 4};
  OracleImageEncoder image{12, 4};
  CategoryVocabulary vocab{{"sky", "grass", "road"}};

  std::vector<FeatureMap> views(int count = 3) const {
    std::vector<FeatureMap> out;
    for (int v = 0; v < count; ++v) {
      ImageTensor img{Tensor3(16, 16, 3), "v" + std::to_string(v)};
      for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
          const int region = (r + c + 4 * v) / 11;
          for (int ch = 0; ch < 3; ++ch) img.pixels.at(r, c, ch) = 0.15 * ((region + ch) % 5);
        }
      out.push_back(image.encode(img));
    }
    return out;
  }
};

TEST(PromptBank, SingleTemplateMatchesLiteralEncoding) {
  Fixture f;
  CategoryVocabulary v({"crack"});
  const PromptBank bank = make_prompt_bank(f.text, {"a photo of a {}"}, v);
  const TextGrid g = compose_text_features(bank, f.text);
  ASSERT_EQ(g.size(), 1u);
  ASSERT_EQ(g[0].size(), 1u);
  EXPECT_EQ(g[0][0].values, encode_text(f.text, "a photo of a crack").values);
}

TEST(PromptBank, PrefixOnlyPromptAppendsName) {
  Fixture f;
  const PromptBank bank = make_prompt_bank(f.text, {"a photo of a"}, f.vocab);
  EXPECT_EQ(compose_text_features(bank, f.text)[1][0].values, encode_text(f.text, "a photo of a grass").values);
}

TEST(PromptBank, DescriptionInitializesClassTokens) {
  Fixture f;
  CategoryVocabulary v({"others", "tool"});
  v.descriptions[1] = "endoscopic grasping tool";
  const PromptBank bank = make_prompt_bank(f.text, {"a photo of a"}, v);
  EXPECT_EQ(compose_text_features(bank, f.text)[1][0].values,
            encode_text(f.text, "a photo of a endoscopic grasping tool").values);
}

TEST(PromptBank, GridShapeAndIdenticalRows) {
  Fixture f;
  SegTTOConfig cfg;
  PromptBank bank = make_prompt_bank(f.text, cfg.prompts, f.vocab);
  TextGrid g = compose_text_features(bank, f.text);
  ASSERT_EQ(g.size(), 3u);
  for (const auto& row : g) EXPECT_EQ(row.size(), 5u);
  bank.per_class[2] = bank.per_class[0];
  g = compose_text_features(bank, f.text);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(g[0][k].values, g[2][k].values);
}

TEST(PromptBank, FlattenRoundTrip) {
  Fixture f;
  PromptBank bank = make_prompt_bank(f.text, {"a photo of a", "a {} in the scene"}, f.vocab);
  Vec p = bank.flatten();
  EXPECT_EQ(p.size(), bank.parameter_count());
  for (auto& x : p) x += 0.5;
  bank.unflatten(p);
  EXPECT_EQ(bank.flatten(), p);
  EXPECT_THROW(bank.unflatten(Vec(3)), ArgumentError);
}

TEST(PcGrad, HandExamples) {
  EXPECT_EQ(pcgrad_combine(Vec{1, 0}, Vec{0, 1}), (Vec{1, 1}));
  const Vec b = pcgrad_combine(Vec{1, 0}, Vec{-1, 1});
  EXPECT_NEAR(b[0], 0.5, 1e-12);
  EXPECT_NEAR(b[1], 1.5, 1e-12);
  const Vec c = pcgrad_combine(Vec{1, 0}, Vec{-1, 0});
  EXPECT_NEAR(c[0], 0.0, 1e-12);
  EXPECT_NEAR(c[1], 0.0, 1e-12);
  EXPECT_THROW(pcgrad_combine(Vec{1, 0}, Vec{1}), ArgumentError);
}

TEST(PcGrad, ProjectRemovesOnlyConflictingComponent) {
  const Vec p = pcgrad_project(Vec{-1, 1}, Vec{1, 0});
  EXPECT_DOUBLE_EQ(p[0], 0.0);
  EXPECT_DOUBLE_EQ(p[1], 1.0);
  const Vec q = pcgrad_project(Vec{1, 1}, Vec{1, 0});
  EXPECT_EQ(q, (Vec{1, 1}));
}

TEST(PcGrad, ZeroVectorPassesThrough) {
  EXPECT_EQ(pcgrad_combine(Vec{0, 0, 0}, Vec{1, -2, 3}), (Vec{1, -2, 3}));
}

TEST(PcGrad, RandomPairsResolveConflicts) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng() % 63;
    Vec a(n), b(n);
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng);
    const Vec g = pcgrad_combine(a, b);
    if (dot(a, b) >= 0) {
      for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(g[i], a[i] + b[i]);
    } else {
      // The combined step never increases either objective to first order.
      EXPECT_GE(dot(g, a), -1e-9);
      EXPECT_GE(dot(g, b), -1e-9);
    }
  }
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  SegTTOConfig cfg;
  cfg.learning_rate = 0.01;
  Vec params{1.0, -2.0, 0.5};
  const Vec grad{0.3, -4.0, 0.0};
  AdamState state;
  const double step = adamw_step(params, grad, {true, true, true}, state, cfg);
  // Bias-corrected first step is g / (|g| + eps) times the learning rate.
  EXPECT_NEAR(params[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(params[1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(params[2], 0.5);
  EXPECT_NEAR(step, std::sqrt(2.0) * 0.01, 1e-9);
  EXPECT_EQ(state.steps, 1);
}

TEST(AdamW, MaskAndWeightDecay) {
  SegTTOConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  Vec params{2.0, 2.0};
  AdamState state;
  adamw_step(params, Vec{0.0, 1.0}, {true, false}, state, cfg);
  EXPECT_DOUBLE_EQ(params[0], 2.0 - 0.1 * 0.5 * 2.0);
  EXPECT_EQ(params[1], 2.0);
}

TEST(Tuning, NoStepsLeavesBankUnchanged) {
  Fixture f;
  SegTTOConfig cfg;
  cfg.entropy_steps = cfg.ce_steps = 0;
  const PromptBank bank = make_prompt_bank(f.text, cfg.prompts, f.vocab);
  const auto out = run_textual_tuning(bank, f.text, f.views(), cfg);
  EXPECT_EQ(out.bank.flatten(), bank.flatten());
  EXPECT_TRUE(out.trace.steps.empty());
}

TEST(Tuning, DefaultScheduleTrace) {
  Fixture f;
  SegTTOConfig cfg;
  const PromptBank bank = make_prompt_bank(f.text, cfg.prompts, f.vocab);
  const auto out = run_textual_tuning(bank, f.text, f.views(), cfg);
  ASSERT_EQ(out.trace.steps.size(), 5u);
  const std::vector<std::pair<int, std::string>> expect = {
      {0, "entropy"}, {0, "ce"}, {1, "entropy"}, {1, "ce"}, {2, "ce"}};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(out.trace.steps[i].step, expect[i].first);
    EXPECT_EQ(out.trace.steps[i].loss_name, expect[i].second);
    EXPECT_GT(out.trace.steps[i].update_norm, 0.0);
  }
  ASSERT_TRUE(out.trace.initial_ssl && out.trace.final_ssl);
  EXPECT_LE(*out.trace.final_ssl, *out.trace.initial_ssl);
  EXPECT_NE(out.bank.flatten(), bank.flatten());
}

TEST(Tuning, SurplusEntropySteps) {
  Fixture f;
  SegTTOConfig cfg;
  cfg.entropy_steps = 3;
  cfg.ce_steps = 1;
  const auto out = run_textual_tuning(make_prompt_bank(f.text, cfg.prompts, f.vocab), f.text, f.views(), cfg);
  std::vector<std::string> names;
  for (const auto& r : out.trace.steps) names.push_back(r.loss_name);
  EXPECT_EQ(names, (std::vector<std::string>{"entropy", "ce", "entropy", "entropy"}));
}

TEST(Tuning, PromptsOnlyFreezesClassTokens) {
  Fixture f;
  SegTTOConfig cfg;
  cfg.tuned_component = TunedComponent::kPrompts;
  const PromptBank bank = make_prompt_bank(f.text, cfg.prompts, f.vocab);
  const auto out = run_textual_tuning(bank, f.text, f.views(), cfg);
  EXPECT_EQ(out.bank.per_class, bank.per_class);
  EXPECT_NE(out.bank.general, bank.general);
}

TEST(Tuning, ClassesOnlyFreezesPromptTokens) {
  Fixture f;
  SegTTOConfig cfg;
  cfg.tuned_component = TunedComponent::kClasses;
  const PromptBank bank = make_prompt_bank(f.text, cfg.prompts, f.vocab);
  const auto out = run_textual_tuning(bank, f.text, f.views(), cfg);
  EXPECT_EQ(out.bank.general, bank.general);
  EXPECT_NE(out.bank.per_class, bank.per_class);
}

TEST(Tuning, ResetRestoresInitialFeatures) {
  Fixture f;
  SegTTOConfig cfg;
  const PromptBank bank = make_prompt_bank(f.text, cfg.prompts, f.vocab);
  const TextGrid before = compose_text_features(bank, f.text);
  const auto tuned = run_textual_tuning(bank, f.text, f.views(), cfg).bank;
  const PromptBank reset = reset_bank(tuned);
  const TextGrid after = compose_text_features(reset, f.text);
  for (std::size_t j = 0; j < before.size(); ++j)
    for (std::size_t k = 0; k < before[j].size(); ++k) EXPECT_EQ(after[j][k].values, before[j][k].values);
  EXPECT_EQ(reset_bank(reset).flatten(), reset.flatten());
  EXPECT_TRUE(reset.optimizer.first.empty());
  EXPECT_EQ(reset_bank(bank).flatten(), bank.flatten());
}

TEST(Tuning, Errors) {
  Fixture f;
  SegTTOConfig cfg;
  const PromptBank bank = make_prompt_bank(f.text, cfg.prompts, f.vocab);
  EXPECT_THROW(run_textual_tuning(bank, f.text, {}, cfg), ArgumentError);
}

/// Text encoder that produces NaN once its inputs leave the initial values.
class FragileTextEncoder : public OracleTextEncoder {
 public:
  using OracleTextEncoder::OracleTextEncoder;
  Vec encode_tokens(const TokenSequence& t) const override {
    Vec v = OracleTextEncoder::encode_tokens(t);
    if (++calls_ > limit) v[0] = std::nan("");
    return v;
  }
  std::size_t limit = 0;
  mutable std::size_t calls_ = 0;
};

TEST(Tuning, NonFiniteLossAbortsWithTrace) {
  Fixture f;
  SegTTOConfig cfg;
  FragileTextEncoder enc(12, 4);
  const PromptBank bank = make_prompt_bank(enc, cfg.prompts, f.vocab);
  enc.calls_ = 0;
  enc.limit = 15 * 4;  // initial loss, then a couple of evaluations
  try {
    run_textual_tuning(bank, enc, f.views(), cfg);
    FAIL() << "expected the run to abort";
  } catch (const TuningAborted& e) {
    EXPECT_TRUE(e.trace().initial_ssl.has_value());
  } catch (const NumericError&) {
    SUCCEED();
  }
}

TEST(Tuning, BankGradientMatchesFiniteDifference) {
  Fixture f;
  SegTTOConfig cfg;
  cfg.temperature = 20.0;
  PromptBank bank = make_prompt_bank(f.text, {"a photo of a", "a {} here"}, f.vocab);
  const auto views = f.views(2);
  const Vec base = bank.flatten();
  const auto g = bank_loss_and_gradient(bank, f.text, views, cfg, LossKind::kEntropy).grad;
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < base.size(); i += 3) {
    Vec p = base;
    p[i] += 1e-6;
    bank.unflatten(p);
    const double up = bank_loss_and_gradient(bank, f.text, views, cfg, LossKind::kEntropy).value;
    p[i] -= 2e-6;
    bank.unflatten(p);
    const double down = bank_loss_and_gradient(bank, f.text, views, cfg, LossKind::kEntropy).value;
    const double fd = (up - down) / 2e-6;
    diff += (fd - g[i]) * (fd - g[i]);
    ref += fd * fd;
  }
  EXPECT_LE(std::sqrt(diff / ref), 1e-3);
}

}  // namespace
}  // namespace segtto
