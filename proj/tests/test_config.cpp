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

#include <sstream>

#include "segtto/config.hpp"
#include "segtto/error.hpp"

namespace segtto {
namespace {

TEST(Config, Defaults) {
  const SegTTOConfig c = validate_config(parse_config_string(""));
  EXPECT_EQ(c.prompt_count, 5);
  EXPECT_EQ(c.view_count, 64);
  EXPECT_DOUBLE_EQ(c.retention_fraction, 0.2);
  EXPECT_EQ(c.entropy_steps, 2);
  EXPECT_EQ(c.ce_steps, 3);
  EXPECT_DOUBLE_EQ(c.learning_rate, 5e-3);
  EXPECT_DOUBLE_EQ(c.temperature, 100.0);
  EXPECT_EQ(c.aggregation_mode, AggregationMode::kMean);
  EXPECT_EQ(c.pseudo_label_mode, PseudoLabelMode::kHard);
  EXPECT_EQ(c.selection_loss_mode, SelectionLossMode::kEntropyOnly);
  EXPECT_EQ(c.attribute_mode, AttributeMode::kPreAggregation);
  EXPECT_EQ(c.tuned_component, TunedComponent::kBoth);
  EXPECT_EQ(c.total_steps(), 5);
}

void expect_field_error(SegTTOConfig c, const std::string& field) {
  try {
    validate_config(c);
    FAIL() << "expected a validation error for " << field;
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), field);
  }
}

TEST(Config, OutOfRangeNamesTheField) {
  SegTTOConfig c;
  c.retention_fraction = 0.0;
  expect_field_error(c, "retention_fraction");
  c = {};
  c.mix_beta = 1.5;
  expect_field_error(c, "mix_beta");
  c = {};
  c.temperature = -1;
  expect_field_error(c, "temperature");
  c = {};
  c.prompt_count = 0;
  expect_field_error(c, "prompt_count");
  c = {};
  c.ce_steps = -1;
  expect_field_error(c, "ce_steps");
}

TEST(Config, BoundaryValuesAccepted) {
  SegTTOConfig c;
  c.retention_fraction = 1.0;
  c.mix_beta = 0.0;
  c.entropy_steps = 0;
  c.ce_steps = 0;
  EXPECT_NO_THROW(validate_config(c));
}

TEST(Config, ParsesKeysCommentsAndEnums) {
  const SegTTOConfig c = parse_config_string(
      "# comment\n"
      "  temperature = 50\n"
      "aggregation_mode = median\n"
      "pseudo_label_mode=soft\n"
      "selection_loss_mode = full_ssl\n"
      "attribute_mode = none\n"
      "tuned_component = prompts\n"
      "visual_aggregation = false\n"
      "prompts = a photo of a | a {} in the wild\n"
      "rng_seed = -4\n");
  EXPECT_DOUBLE_EQ(c.temperature, 50.0);
  EXPECT_EQ(c.aggregation_mode, AggregationMode::kMedian);
  EXPECT_EQ(c.pseudo_label_mode, PseudoLabelMode::kSoft);
  EXPECT_EQ(c.selection_loss_mode, SelectionLossMode::kFullSsl);
  EXPECT_EQ(c.attribute_mode, AttributeMode::kNone);
  EXPECT_EQ(c.tuned_component, TunedComponent::kPrompts);
  EXPECT_FALSE(c.visual_aggregation);
  EXPECT_EQ(c.prompts, (std::vector<std::string>{"a photo of a", "a {} in the wild"}));
  EXPECT_EQ(c.rng_seed, -4);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config_string("no_such_key = 1\n"), ValidationError);
  EXPECT_THROW(parse_config_string("temperature = hot\n"), ValidationError);
  EXPECT_THROW(parse_config_string("aggregation_mode = mode\n"), ValidationError);
  EXPECT_THROW(parse_config_string("just words\n"), ValidationError);
  EXPECT_THROW(parse_config_string("view_count = 3.5\n"), ValidationError);
}

TEST(Config, FormatRoundTrips) {
  SegTTOConfig c;
  c.temperature = 0.1 + 0.2;  // not exactly representable in short decimal
  c.learning_rate = 1.0 / 3.0;
  c.aggregation_mode = AggregationMode::kMax;
  c.prompts = {"a photo of a", "itap of a"};
  c.rng_seed = 123456789012345;
  EXPECT_EQ(parse_config_string(format_config(c)), c);
}

TEST(Config, EnumNames) {
  EXPECT_STREQ(to_string(AggregationMode::kMedian), "median");
  EXPECT_STREQ(to_string(AttributeMode::kPostAggregation), "post_aggregation");
  EXPECT_STREQ(to_string(TunedComponent::kClasses), "classes");
}

}  // namespace
}  // namespace segtto
