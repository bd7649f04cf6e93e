#pragma once

#include "constalign/gateway.hpp"

#include <json.hpp>

namespace constalign::gateway {

/// Client for OpenAI-compatible JSON-over-HTTP endpoints.
///
///   generate      POST {base_url}/chat/completions
///   score_choice  POST {base_url}/completions  (echo + logprobs)
///                 falling back to chat top_logprobs when enabled on the handle
///
/// Timeouts, connection failures, 408, 429 and 5xx are retried with
/// exponential backoff; 401/403 and other 4xx fail immediately.
class HttpClient final : public ModelClient {
 public:
  HttpClient(ModelHandle handle, RetryPolicy retry);

  const ModelHandle& handle() const override { return handle_; }
  CompletionResult generate(std::span<const ChatMessage> messages,
                            const GenerationParams& params) const override;
  ChoiceScore score_choice(std::string_view prompt, std::string_view continuation) const override;
  std::shared_ptr<ModelClient> with_model(std::string model_name) const override;

  struct Response {
    nlohmann::json body;
    int retries = 0;
  };
  /// POSTs `body` to base_url + `path` under the retry policy.
  Response post(const std::string& path, const nlohmann::json& body) const;

 private:
  ChoiceScore score_with_fallback(std::string_view prompt, std::string_view continuation) const;

  ModelHandle handle_;
  RetryPolicy retry_;
  std::string host_;    // scheme://host:port
  std::string prefix_;  // path component of base_url, without trailing slash
};

}  // namespace constalign::gateway
