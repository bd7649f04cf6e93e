#pragma once

#include "constalign/error.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace constalign::gateway {

enum class Role { System, User, Assistant };

std::string to_string(Role role);
Role parse_role(std::string_view name);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

ChatMessage system_message(std::string content);
ChatMessage user_message(std::string content);
ChatMessage assistant_message(std::string content);

/// Sampling defaults: top-p 0.9 and temperature 0.7. max_tokens=512 is a
/// project choice for response length.
struct GenerationParams {
  double temperature = 0.7;
  double top_p = 0.9;
  int max_tokens = 512;
  std::optional<std::int64_t> seed;

  void validate() const;
  bool operator==(const GenerationParams&) const = default;
};

enum class FinishReason { Stop, Length, Error };

std::string to_string(FinishReason reason);
FinishReason parse_finish_reason(std::string_view name);

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;

  bool operator==(const Usage&) const = default;
};

struct CompletionResult {
  std::string text;
  FinishReason finish_reason = FinishReason::Stop;
  Usage usage;
  std::string endpoint_id;
  std::int64_t latency_ms = 0;
  int retries = 0;
  // Set when the endpoint blocked the request on policy grounds; `text`
  // then carries the refusal message and the pipeline treats it as a reply.
  bool refused = false;
};

enum class RoleTag { Base, Oracle, Judge, Mock };

std::string to_string(RoleTag tag);
RoleTag parse_role_tag(std::string_view name);

/// Which pipeline slot a client serves. Mock scripts key their rules on it.
enum class Slot { Base, Oracle, Judge };

std::string to_string(Slot slot);

struct ModelHandle {
  std::string endpoint_id;
  std::string base_url;    // e.g. http://127.0.0.1:8000/v1; ignored for mock
  std::string model_name;
  std::string api_key_ref; // name of the environment variable holding the key
  RoleTag role_tag = RoleTag::Mock;
  std::string mock_script; // path to the mock fixture when role_tag == Mock
  bool scoring_fallback = false;
};

/// Throws PreconditionFailed unless the handle may serve `slot`.
void require_slot(const ModelHandle& handle, Slot slot);

struct ChoiceScore {
  std::string continuation;
  double log_likelihood = 0.0;
  int token_count = 0;
  bool fallback = false;
};

/// Thread-safe client for one endpoint.
class ModelClient {
 public:
  virtual ~ModelClient() = default;

  virtual const ModelHandle& handle() const = 0;
  virtual CompletionResult generate(std::span<const ChatMessage> messages,
                                    const GenerationParams& params) const = 0;
  virtual ChoiceScore score_choice(std::string_view prompt, std::string_view continuation) const = 0;
  /// Same endpoint, different served model name. Used to swap the base model
  /// reference after a training run.
  virtual std::shared_ptr<ModelClient> with_model(std::string model_name) const = 0;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{200};
  double backoff_multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
  std::chrono::seconds timeout{120};
};

std::shared_ptr<ModelClient> make_client(const ModelHandle& handle, Slot slot,
                                         const RetryPolicy& retry = {});

inline CompletionResult generate(const ModelClient& client, std::span<const ChatMessage> messages,
                                 const GenerationParams& params) {
  return client.generate(messages, params);
}

inline ChoiceScore score_choice(const ModelClient& client, std::string_view prompt,
                                std::string_view continuation) {
  return client.score_choice(prompt, continuation);
}

/// One slot of a batched call: exactly one of value / error is set.
template <class T>
struct Outcome {
  std::optional<T> value;
  std::optional<Error> error;

  bool ok() const { return value.has_value(); }
};

/// Runs fn(0..n-1) with at most `max_in_flight` invocations outstanding.
/// fn must not throw.
void run_bounded(std::size_t n, std::size_t max_in_flight,
                 const std::function<void(std::size_t)>& fn);

/// Maps fn over [0, n) under the in-flight bound; exceptions derived from
/// Error are captured in-slot, never aborting siblings.
template <class T>
std::vector<Outcome<T>> map_bounded(std::size_t n, std::size_t max_in_flight,
                                    const std::function<T(std::size_t)>& fn) {
  std::vector<Outcome<T>> out(n);
  run_bounded(n, max_in_flight, [&](std::size_t i) {
    try {
      out[i].value = fn(i);
    } catch (const Error& e) {
      out[i].error = e;
    } catch (const std::exception& e) {
      out[i].error = Error(ErrorCode::EndpointUnreachable, e.what());
    }
  });
  return out;
}

using ChatRequest = std::vector<ChatMessage>;

std::vector<Outcome<CompletionResult>> generate_batch(const ModelClient& client,
                                                      std::span<const ChatRequest> requests,
                                                      const GenerationParams& params,
                                                      std::size_t max_in_flight);

void to_json(nlohmann::json& j, const ChatMessage& m);
void from_json(const nlohmann::json& j, ChatMessage& m);
void to_json(nlohmann::json& j, const GenerationParams& p);
void from_json(const nlohmann::json& j, GenerationParams& p);
void to_json(nlohmann::json& j, const CompletionResult& r);
void from_json(const nlohmann::json& j, CompletionResult& r);

}  // namespace constalign::gateway
