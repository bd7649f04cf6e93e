#include "constalign/http_backend.hpp"

#include "constalign/util.hpp"

#include <httplib.h>

#include <cstdlib>
#include <thread>

namespace constalign::gateway {

using json = nlohmann::json;

namespace {

enum class StatusClass { Ok, Transient, Auth, Refused, Rejected, Unsupported };

StatusClass classify(int status, const json& body) {
  if (status >= 200 && status < 300) return StatusClass::Ok;
  if (status == 401 || status == 403) return StatusClass::Auth;
  if (status == 408 || status == 429 || status >= 500) return StatusClass::Transient;
  if (status == 404 || status == 405 || status == 501) return StatusClass::Unsupported;
  if (body.is_object() && body.contains("error") && body["error"].is_object()) {
    const auto code = body["error"].value("code", json()).is_string() ? body["error"]["code"].get<std::string>() : "";
    if (code == "content_filter" || code == "content_policy_violation") return StatusClass::Refused;
  }
  return StatusClass::Rejected;
}

std::string error_message(const json& body, const std::string& raw) {
  if (body.is_object() && body.contains("error") && body["error"].is_object()) {
    return body["error"].value("message", raw);
  }
  return raw;
}

}  // namespace

HttpClient::HttpClient(ModelHandle handle, RetryPolicy retry) : handle_(std::move(handle)), retry_(retry) {
  const auto& url = handle_.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::ConfigInvalid, "base_url '" + url + "' lacks a scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  host_ = url.substr(0, path_start);
  prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
}

HttpClient::Response HttpClient::post(const std::string& path, const json& body) const {
  httplib::Client cli(host_);
  cli.set_connection_timeout(retry_.timeout);
  cli.set_read_timeout(retry_.timeout);
  cli.set_write_timeout(retry_.timeout);

  httplib::Headers headers;
  if (!handle_.api_key_ref.empty()) {
    if (const char* key = std::getenv(handle_.api_key_ref.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  const std::string payload = body.dump();
  auto backoff = retry_.initial_backoff;
  for (int attempt = 0;; ++attempt) {
    auto res = cli.Post(prefix_ + path, headers, payload, "application/json");
    std::string failure;
    if (res) {
      json parsed = json::parse(res->body, nullptr, false);
      switch (classify(res->status, parsed)) {
        case StatusClass::Ok:
          if (parsed.is_discarded()) {
            throw Error(ErrorCode::EndpointRejected, handle_.endpoint_id + ": response is not JSON");
          }
          return {std::move(parsed), attempt};
        case StatusClass::Auth:
          throw Error(ErrorCode::AuthFailure,
                      handle_.endpoint_id + ": HTTP " + std::to_string(res->status));
        case StatusClass::Refused:
          throw Error(ErrorCode::ContentRefused, handle_.endpoint_id + ": policy block",
                      error_message(parsed, res->body));
        case StatusClass::Unsupported:
          throw Error(ErrorCode::ScoringUnsupported,
                      handle_.endpoint_id + path + ": HTTP " + std::to_string(res->status));
        case StatusClass::Rejected:
          throw Error(ErrorCode::EndpointRejected, handle_.endpoint_id + ": HTTP " +
                                                       std::to_string(res->status) + ": " +
                                                       error_message(parsed, res->body));
        case StatusClass::Transient:
          failure = "HTTP " + std::to_string(res->status);
          break;
      }
    } else {
      failure = httplib::to_string(res.error());
    }
    if (attempt >= retry_.max_retries) {
      throw Error(ErrorCode::EndpointUnreachable, handle_.endpoint_id + ": " + failure + " after " +
                                                      std::to_string(attempt) + " retries");
    }
    std::this_thread::sleep_for(backoff);
    backoff = std::min(retry_.max_backoff,
                       std::chrono::milliseconds(static_cast<long>(backoff.count() * retry_.backoff_multiplier)));
  }
}

CompletionResult HttpClient::generate(std::span<const ChatMessage> messages,
                                      const GenerationParams& params) const {
  params.validate();
  json body{{"model", handle_.model_name},
            {"messages", json(std::vector<ChatMessage>(messages.begin(), messages.end()))},
            {"temperature", params.temperature},
            {"top_p", params.top_p},
            {"max_tokens", params.max_tokens}};
  if (params.seed) body["seed"] = *params.seed;

  const auto start = std::chrono::steady_clock::now();
  Response response;
  try {
    response = post("/chat/completions", body);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ScoringUnsupported) throw;
    throw Error(ErrorCode::EndpointRejected, e.what());
  }
  const auto elapsed = std::chrono::steady_clock::now() - start;

  try {
    const auto& choice = response.body.at("choices").at(0);
    const std::string finish = choice.value("finish_reason", std::string("stop"));
    std::string text = choice.at("message").value("content", json()).is_string()
                           ? choice.at("message").at("content").get<std::string>()
                           : std::string();
    if (finish == "content_filter") {
      throw Error(ErrorCode::ContentRefused, handle_.endpoint_id + ": content filtered", text);
    }
    CompletionResult result;
    result.text = std::move(text);
    result.finish_reason = parse_finish_reason(finish);
    if (auto usage = response.body.find("usage"); usage != response.body.end() && usage->is_object()) {
      result.usage.prompt_tokens = usage->value("prompt_tokens", 0);
      result.usage.completion_tokens = usage->value("completion_tokens", 0);
    }
    result.endpoint_id = handle_.endpoint_id;
    result.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
    result.retries = response.retries;
    return result;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::EndpointRejected, handle_.endpoint_id + ": malformed completion: " + e.what());
  }
}

ChoiceScore HttpClient::score_choice(std::string_view prompt, std::string_view continuation) const {
  const std::string full = std::string(prompt) + std::string(continuation);
  json body{{"model", handle_.model_name}, {"prompt", full}, {"max_tokens", 0},
            {"echo", true},                {"logprobs", 0},   {"temperature", 0.0}};
  json logprobs;
  try {
    auto response = post("/completions", body);
    logprobs = response.body.at("choices").at(0).value("logprobs", json());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ScoringUnsupported && e.code() != ErrorCode::EndpointRejected) throw;
    if (handle_.scoring_fallback) return score_with_fallback(prompt, continuation);
    throw Error(ErrorCode::ScoringUnsupported, e.what());
  } catch (const json::exception&) {
  }
  if (!logprobs.is_object() || !logprobs.contains("token_logprobs") || !logprobs.contains("text_offset")) {
    if (handle_.scoring_fallback) return score_with_fallback(prompt, continuation);
    throw Error(ErrorCode::ScoringUnsupported, handle_.endpoint_id + ": no echo logprobs in response");
  }

  ChoiceScore score;
  score.continuation = std::string(continuation);
  const auto& lps = logprobs.at("token_logprobs");
  const auto& offsets = logprobs.at("text_offset");
  for (std::size_t i = 0; i < lps.size() && i < offsets.size(); ++i) {
    if (offsets[i].get<std::size_t>() < prompt.size() || lps[i].is_null()) continue;
    score.log_likelihood += lps[i].get<double>();
    ++score.token_count;
  }
  return score;
}

// Asks for a one-token answer and reads the continuation's probability from
// the top_logprobs list. Absent tokens take the lowest listed logprob.
ChoiceScore HttpClient::score_with_fallback(std::string_view prompt, std::string_view continuation) const {
  const auto words = split_whitespace(continuation);
  if (words.size() != 1) {
    throw Error(ErrorCode::ScoringUnsupported,
                handle_.endpoint_id + ": fallback scoring needs a single-token continuation");
  }
  json body{{"model", handle_.model_name},
            {"messages", json::array({{{"role", "user"}, {"content", std::string(prompt)}}})},
            {"max_tokens", 1},
            {"temperature", 0.0},
            {"logprobs", true},
            {"top_logprobs", 20}};
  auto response = post("/chat/completions", body);
  try {
    const auto& top = response.body.at("choices").at(0).at("logprobs").at("content").at(0).at("top_logprobs");
    double floor = 0.0;
    std::optional<double> found;
    for (const auto& entry : top) {
      const double lp = entry.at("logprob").get<double>();
      floor = std::min(floor, lp);
      if (trim(entry.at("token").get<std::string>()) == words.front() && !found) found = lp;
    }
    ChoiceScore score;
    score.continuation = std::string(continuation);
    score.log_likelihood = found.value_or(floor);
    score.token_count = 1;
    score.fallback = true;
    return score;
  } catch (const json::exception&) {
    throw Error(ErrorCode::ScoringUnsupported, handle_.endpoint_id + ": no top_logprobs in chat response");
  }
}

std::shared_ptr<ModelClient> HttpClient::with_model(std::string model_name) const {
  ModelHandle h = handle_;
  h.model_name = std::move(model_name);
  return std::make_shared<HttpClient>(std::move(h), retry_);
}

}  // namespace constalign::gateway
