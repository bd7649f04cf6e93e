#include "constalign/gateway.hpp"

#include "constalign/http_backend.hpp"
#include "constalign/mock_backend.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace constalign::gateway {

using json = nlohmann::json;

std::string to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view name) {
  if (name == "system") return Role::System;
  if (name == "user") return Role::User;
  if (name == "assistant") return Role::Assistant;
  throw Error(ErrorCode::FormatMismatch, "unknown role '" + std::string(name) + "'");
}

ChatMessage system_message(std::string content) { return {Role::System, std::move(content)}; }
ChatMessage user_message(std::string content) { return {Role::User, std::move(content)}; }
ChatMessage assistant_message(std::string content) { return {Role::Assistant, std::move(content)}; }

void GenerationParams::validate() const {
  if (!(temperature >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorCode::ConfigInvalid, "top_p must be in (0, 1]");
  if (max_tokens <= 0) throw Error(ErrorCode::ConfigInvalid, "max_tokens must be positive");
}

std::string to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Error: return "error";
  }
  return "error";
}

FinishReason parse_finish_reason(std::string_view name) {
  if (name == "stop") return FinishReason::Stop;
  if (name == "length") return FinishReason::Length;
  return FinishReason::Error;
}

std::string to_string(RoleTag tag) {
  switch (tag) {
    case RoleTag::Base: return "base";
    case RoleTag::Oracle: return "oracle";
    case RoleTag::Judge: return "judge";
    case RoleTag::Mock: return "mock";
  }
  return "mock";
}

RoleTag parse_role_tag(std::string_view name) {
  if (name == "base") return RoleTag::Base;
  if (name == "oracle") return RoleTag::Oracle;
  if (name == "judge") return RoleTag::Judge;
  if (name == "mock") return RoleTag::Mock;
  throw Error(ErrorCode::ConfigInvalid, "unknown role_tag '" + std::string(name) + "'");
}

std::string to_string(Slot slot) {
  switch (slot) {
    case Slot::Base: return "base";
    case Slot::Oracle: return "oracle";
    case Slot::Judge: return "judge";
  }
  return "base";
}

void require_slot(const ModelHandle& handle, Slot slot) {
  if (handle.role_tag == RoleTag::Mock) return;
  const bool ok = (slot == Slot::Base && handle.role_tag == RoleTag::Base) ||
                  (slot == Slot::Oracle && handle.role_tag == RoleTag::Oracle) ||
                  (slot == Slot::Judge &&
                   (handle.role_tag == RoleTag::Judge || handle.role_tag == RoleTag::Oracle));
  if (!ok) {
    throw Error(ErrorCode::PreconditionFailed, "endpoint '" + handle.endpoint_id + "' has role_tag " +
                                                   to_string(handle.role_tag) + " and cannot serve the " +
                                                   to_string(slot) + " stage");
  }
}

std::shared_ptr<ModelClient> make_client(const ModelHandle& handle, Slot slot, const RetryPolicy& retry) {
  if (handle.role_tag == RoleTag::Mock) {
    auto script = std::make_shared<const MockScript>(load_mock_script(handle.mock_script));
    return std::make_shared<MockClient>(handle, slot, std::move(script));
  }
  require_slot(handle, slot);
  return std::make_shared<HttpClient>(handle, retry);
}

void run_bounded(std::size_t n, std::size_t max_in_flight, const std::function<void(std::size_t)>& fn) {
  if (max_in_flight == 0) throw Error(ErrorCode::PreconditionFailed, "max_in_flight must be >= 1");
  const std::size_t workers = std::min(n, max_in_flight);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
}

std::vector<Outcome<CompletionResult>> generate_batch(const ModelClient& client,
                                                      std::span<const ChatRequest> requests,
                                                      const GenerationParams& params,
                                                      std::size_t max_in_flight) {
  return map_bounded<CompletionResult>(requests.size(), max_in_flight, [&](std::size_t i) {
    return client.generate(requests[i], params);
  });
}

void to_json(json& j, const ChatMessage& m) { j = json{{"role", to_string(m.role)}, {"content", m.content}}; }

void from_json(const json& j, ChatMessage& m) {
  m.role = parse_role(j.at("role").get<std::string>());
  j.at("content").get_to(m.content);
}

void to_json(json& j, const GenerationParams& p) {
  j = json{{"temperature", p.temperature}, {"top_p", p.top_p}, {"max_tokens", p.max_tokens}};
  if (p.seed) j["seed"] = *p.seed;
}

void from_json(const json& j, GenerationParams& p) {
  p = GenerationParams{};
  if (j.contains("temperature")) j.at("temperature").get_to(p.temperature);
  if (j.contains("top_p")) j.at("top_p").get_to(p.top_p);
  if (j.contains("max_tokens")) j.at("max_tokens").get_to(p.max_tokens);
  if (j.contains("seed") && !j.at("seed").is_null()) p.seed = j.at("seed").get<std::int64_t>();
}

void to_json(json& j, const CompletionResult& r) {
  j = json{{"text", r.text},
           {"finish_reason", to_string(r.finish_reason)},
           {"usage", {{"prompt_tokens", r.usage.prompt_tokens}, {"completion_tokens", r.usage.completion_tokens}}},
           {"endpoint_id", r.endpoint_id},
           {"latency_ms", r.latency_ms},
           {"retries", r.retries},
           {"refused", r.refused}};
}

void from_json(const json& j, CompletionResult& r) {
  j.at("text").get_to(r.text);
  r.finish_reason = parse_finish_reason(j.at("finish_reason").get<std::string>());
  r.usage.prompt_tokens = j.at("usage").value("prompt_tokens", 0);
  r.usage.completion_tokens = j.at("usage").value("completion_tokens", 0);
  r.endpoint_id = j.value("endpoint_id", "");
  r.latency_ms = j.value("latency_ms", std::int64_t{0});
  r.retries = j.value("retries", 0);
  r.refused = j.value("refused", false);
}

}  // namespace constalign::gateway
