#include "constalign/error.hpp"
#include "constalign/http_backend.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <atomic>
#include <mutex>

using namespace constalign;
using namespace constalign::gateway;
using testsupport::chat_reply;
using testsupport::json;
using testsupport::StubServer;

namespace {

RetryPolicy fast_retry(int max_retries = 3) {
  RetryPolicy r;
  r.max_retries = max_retries;
  r.initial_backoff = std::chrono::milliseconds(1);
  r.max_backoff = std::chrono::milliseconds(4);
  r.timeout = std::chrono::seconds(5);
  return r;
}

ModelHandle handle_for(const StubServer& s, RoleTag tag = RoleTag::Base) {
  ModelHandle h;
  h.endpoint_id = "stub";
  h.base_url = s.base_url();
  h.model_name = "stub-model";
  h.role_tag = tag;
  return h;
}

ErrorCode error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

const std::vector<ChatMessage> kHello{user_message("hello")};

}  // namespace

TEST_CASE("chat completion request and response mapping") {
  StubServer s;
  json seen;
  std::string auth;
  s.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(chat_reply("hi there", "length").dump(), "application/json");
  });
  s.start();
  setenv("CONSTALIGN_TEST_KEY", "sekrit", 1);
  auto h = handle_for(s);
  h.api_key_ref = "CONSTALIGN_TEST_KEY";
  HttpClient c(h, fast_retry());
  GenerationParams p;
  p.seed = 9;
  const auto r = c.generate(kHello, p);
  CHECK(r.text == "hi there");
  CHECK(r.finish_reason == FinishReason::Length);
  CHECK(r.usage.prompt_tokens == 3);
  CHECK(r.retries == 0);
  CHECK(r.endpoint_id == "stub");
  CHECK(auth == "Bearer sekrit");
  CHECK(seen["model"] == "stub-model");
  CHECK(seen["temperature"] == 0.7);
  CHECK(seen["top_p"] == 0.9);
  CHECK(seen["seed"] == 9);
  CHECK(seen["messages"][0]["role"] == "user");
  CHECK(seen["messages"][0]["content"] == "hello");
  unsetenv("CONSTALIGN_TEST_KEY");
}

TEST_CASE("transient failures are retried then succeed") {
  StubServer s;
  std::atomic<int> calls{0};
  s.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (++calls <= 2) {
      res.status = calls == 1 ? 503 : 429;
      return;
    }
    res.set_content(chat_reply("ok").dump(), "application/json");
  });
  s.start();
  HttpClient c(handle_for(s), fast_retry());
  const auto r = c.generate(kHello, {});
  CHECK(r.text == "ok");
  CHECK(r.retries == 2);
  CHECK(calls == 3);
}

TEST_CASE("retries exhausted gives EndpointUnreachable") {
  StubServer s;
  std::atomic<int> calls{0};
  s.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 500;
  });
  s.start();
  HttpClient c(handle_for(s), fast_retry(2));
  CHECK(error_of([&] { c.generate(kHello, {}); }) == ErrorCode::EndpointUnreachable);
  CHECK(calls == 3);
}

TEST_CASE("connection refused is retried then unreachable") {
  ModelHandle h;
  h.endpoint_id = "dead";
  h.base_url = "http://127.0.0.1:1/v1";
  h.model_name = "m";
  h.role_tag = RoleTag::Base;
  HttpClient c(h, fast_retry(1));
  CHECK(error_of([&] { c.generate(kHello, {}); }) == ErrorCode::EndpointUnreachable);
}

TEST_CASE("auth failures are not retried") {
  StubServer s;
  std::atomic<int> calls{0};
  s.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 401;
  });
  s.start();
  HttpClient c(handle_for(s), fast_retry());
  CHECK(error_of([&] { c.generate(kHello, {}); }) == ErrorCode::AuthFailure);
  CHECK(calls == 1);
}

TEST_CASE("content policy blocks surface as ContentRefused") {
  StubServer s;
  s.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (json::parse(req.body)["messages"][0]["content"] == "filtered") {
      res.set_content(chat_reply("", "content_filter").dump(), "application/json");
      return;
    }
    res.status = 400;
    res.set_content(json{{"error", {{"code", "content_policy_violation"}, {"message", "nope"}}}}.dump(),
                    "application/json");
  });
  s.start();
  HttpClient c(handle_for(s), fast_retry());
  CHECK(error_of([&] { c.generate(kHello, {}); }) == ErrorCode::ContentRefused);
  const std::vector<ChatMessage> filtered{user_message("filtered")};
  CHECK(error_of([&] { c.generate(filtered, {}); }) == ErrorCode::ContentRefused);
}

TEST_CASE("other 4xx is EndpointRejected; bad base_url is a config error") {
  StubServer s;
  s.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 422;
    res.set_content(json{{"error", {{"message", "bad field"}}}}.dump(), "application/json");
  });
  s.start();
  HttpClient c(handle_for(s), fast_retry());
  CHECK(error_of([&] { c.generate(kHello, {}); }) == ErrorCode::EndpointRejected);
  ModelHandle bad;
  bad.base_url = "localhost:8000";
  CHECK(error_of([&] { HttpClient x(bad, {}); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("score_choice sums continuation logprobs from echo") {
  StubServer s;
  json seen;
  s.server().Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    // prompt "Q: x\nA:" (7 chars) + " True"
    json lp{{"tokens", {"Q", ":", " x", "\n", "A", ":", " True"}},
            {"token_logprobs", {nullptr, -1.0, -2.0, -0.1, -0.2, -0.3, -0.25}},
            {"text_offset", {0, 1, 2, 4, 5, 6, 7}}};
    res.set_content(json{{"choices", {{{"text", ""}, {"logprobs", lp}}}}}.dump(), "application/json");
  });
  s.start();
  HttpClient c(handle_for(s), fast_retry());
  const auto score = c.score_choice("Q: x\nA:", " True");
  CHECK(score.log_likelihood == doctest::Approx(-0.25));
  CHECK(score.token_count == 1);
  CHECK_FALSE(score.fallback);
  CHECK(seen["echo"] == true);
  CHECK(seen["max_tokens"] == 0);
  CHECK(seen["prompt"] == "Q: x\nA: True");
}

TEST_CASE("score_choice without logprob support") {
  StubServer s;
  s.server().Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) { res.status = 404; });
  s.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    json top = json::array({{{"token", "True"}, {"logprob", -0.1}}, {{"token", " False"}, {"logprob", -2.5}}});
    json body = chat_reply("True");
    body["choices"][0]["logprobs"] = {{"content", {{{"token", "True"}, {"logprob", -0.1}, {"top_logprobs", top}}}}};
    res.set_content(body.dump(), "application/json");
  });
  s.start();
  HttpClient plain(handle_for(s), fast_retry());
  CHECK(error_of([&] { plain.score_choice("p", "True"); }) == ErrorCode::ScoringUnsupported);

  auto h = handle_for(s);
  h.scoring_fallback = true;
  HttpClient fb(h, fast_retry());
  const auto yes = fb.score_choice("p", "True");
  CHECK(yes.fallback);
  CHECK(yes.log_likelihood == doctest::Approx(-0.1));
  CHECK(fb.score_choice("p", "False").log_likelihood == doctest::Approx(-2.5));
  CHECK(fb.score_choice("p", "Maybe").log_likelihood == doctest::Approx(-2.5));
  CHECK(error_of([&] { fb.score_choice("p", "two words"); }) == ErrorCode::ScoringUnsupported);
}

TEST_CASE("generate_batch never exceeds max_in_flight against a live server") {
  StubServer s;
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  s.server().new_task_queue = [] { return new httplib::ThreadPool(16); };
  s.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int now = ++in_flight;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(15));
    --in_flight;
    res.set_content(chat_reply(json::parse(req.body)["messages"][0]["content"]).dump(), "application/json");
  });
  s.start();
  HttpClient c(handle_for(s), fast_retry());
  std::vector<ChatRequest> reqs;
  for (int i = 0; i < 24; ++i) reqs.push_back({user_message("m" + std::to_string(i))});
  const auto out = generate_batch(c, reqs, {}, 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    REQUIRE(out[i].ok());
    CHECK(out[i].value->text == "m" + std::to_string(i));
  }
  CHECK(peak.load() <= 4);
  CHECK(peak.load() >= 2);
}

TEST_CASE("make_client enforces slot roles") {
  ModelHandle h;
  h.base_url = "http://127.0.0.1:9/v1";
  h.model_name = "m";
  h.role_tag = RoleTag::Judge;
  CHECK(error_of([&] { make_client(h, Slot::Base); }) == ErrorCode::PreconditionFailed);
  CHECK_NOTHROW(make_client(h, Slot::Judge));
}
