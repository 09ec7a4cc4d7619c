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

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "segtto/attributes.hpp"
#include "segtto/error.hpp"

namespace segtto {

/// Plain-HTTP chat-completion client (OpenAI-compatible request shape).
/// Configured from SEGTTO_LLM_URL and SEGTTO_LLM_MODEL.
class HttpChatClient : public LlmClient {
 public:
  HttpChatClient(std::string url, std::string model) : model_(std::move(model)) {
    const auto scheme_end = url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = url.find('/', host_start);
    base_ = path_start == std::string::npos ? url : url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/v1/chat/completions" : url.substr(path_start);
  }

  static std::unique_ptr<HttpChatClient> from_environment() {
    const char* url = std::getenv("SEGTTO_LLM_URL");
    if (url == nullptr || *url == '\0') return nullptr;
    const char* model = std::getenv("SEGTTO_LLM_MODEL");
    return std::make_unique<HttpChatClient>(url, model ? model : "");
  }

  std::string complete(const LLMPrompt& prompt) override {
    httplib::Client cli(base_);
    cli.set_read_timeout(120, 0);
    const nlohmann::json body = {{"model", model_},
                                 {"temperature", 0},
                                 {"messages", {{{"role", "user"}, {"content", prompt.rendered}}}}};
    auto res = cli.Post(path_, body.dump(), "application/json");
    if (!res) throw RetrievalError("LLM endpoint " + base_ + " unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw RetrievalError("LLM endpoint returned HTTP " + std::to_string(res->status));
    try {
      const auto doc = nlohmann::json::parse(res->body);
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("unexpected LLM response shape: ") + e.what(), res->body);
    }
  }

  std::string identifier() const override { return model_.empty() ? base_ : model_; }

 private:
  std::string base_;
  std::string path_;
  std::string model_;
};

}  // namespace segtto
