#pragma once

#include "constalign/controller.hpp"
#include "constalign/mock_backend.hpp"
#include "constalign/prompts.hpp"
#include "constalign/util.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

namespace testsupport {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline fs::path fixtures_dir() { return CONSTALIGN_FIXTURES_DIR; }
inline fs::path mock_trainer_path() { return CONSTALIGN_MOCK_TRAINER; }
inline fs::path cli_path() { return CONSTALIGN_CLI; }
inline fs::path loop_dir() { return fixtures_dir() / "loop"; }
inline fs::path eval_dir() { return fixtures_dir() / "eval"; }

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "constalign-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline fs::path write_file(const fs::path& path, const std::string& content) {
  constalign::write_text_file_atomic(path, content);
  return path;
}

inline constalign::PromptSet prompts() { return constalign::PromptSet::load(constalign::PromptSet::default_dir()); }

inline std::shared_ptr<constalign::gateway::ModelClient> mock_client(const json& script,
                                                                      constalign::gateway::Slot slot,
                                                                      const std::string& model = "toy") {
  constalign::gateway::ModelHandle h;
  h.endpoint_id = "mock-" + constalign::gateway::to_string(slot);
  h.model_name = model;
  h.role_tag = constalign::gateway::RoleTag::Mock;
  auto parsed = std::make_shared<constalign::gateway::MockScript>(constalign::gateway::parse_mock_script(script));
  return std::make_shared<constalign::gateway::MockClient>(h, slot, parsed);
}

/// Forwards to another client and records every generate() call.
class RecordingClient final : public constalign::gateway::ModelClient {
 public:
  explicit RecordingClient(std::shared_ptr<const constalign::gateway::ModelClient> inner) : inner_(std::move(inner)) {}

  const constalign::gateway::ModelHandle& handle() const override { return inner_->handle(); }
  constalign::gateway::CompletionResult generate(std::span<const constalign::gateway::ChatMessage> messages,
                                                 const constalign::gateway::GenerationParams& params) const override {
    {
      std::lock_guard lock(mu_);
      calls_.emplace_back(messages.begin(), messages.end());
    }
    return inner_->generate(messages, params);
  }
  constalign::gateway::ChoiceScore score_choice(std::string_view prompt, std::string_view continuation) const override {
    return inner_->score_choice(prompt, continuation);
  }
  std::shared_ptr<constalign::gateway::ModelClient> with_model(std::string model_name) const override {
    return std::make_shared<RecordingClient>(inner_->with_model(std::move(model_name)));
  }

  std::vector<std::vector<constalign::gateway::ChatMessage>> calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  std::shared_ptr<const constalign::gateway::ModelClient> inner_;
  mutable std::mutex mu_;
  mutable std::vector<std::vector<constalign::gateway::ChatMessage>> calls_;
};

inline json load_json(const fs::path& path) { return json::parse(constalign::read_text_file(path)); }

/// Config JSON for the three-class mock loop, rooted at `run_dir`.
inline json loop_config(const fs::path& run_dir, const fs::path& corpus = loop_dir() / "corpus.jsonl") {
  const std::string script = (loop_dir() / "mock_script.json").string();
  return json{
      {"run_dir", run_dir.string()},
      {"endpoints",
       {{"base", {{"role_tag", "mock"}, {"model_name", "toy"}, {"mock_script", script}}},
        {"oracle", {{"role_tag", "mock"}, {"model_name", "oracle-mock"}, {"mock_script", script}}},
        {"judge",
         {{"role_tag", "mock"},
          {"model_name", "judge-mock"},
          {"mock_script", (eval_dir() / "judge_script.json").string()}}}}},
      {"corpus", {{"path", corpus.string()}, {"format", "generic-jsonl"}}},
      {"redteam_batch_size", 3},
      {"generation", {{"temperature", 0.7}, {"top_p", 0.9}, {"max_tokens", 256}}},
      {"oracle_generation", {{"temperature", 0.0}, {"top_p", 1.0}, {"max_tokens", 512}}},
      {"trainer", {{"command", {mock_trainer_path().string(), "{manifest}"}}}},
      {"seed", 7},
      {"max_iterations", 6},
      {"max_in_flight", 4}};
}

/// In-process HTTP server on an ephemeral port, stopped on destruction.
class StubServer {
 public:
  StubServer() = default;
  ~StubServer() { stop(); }
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  httplib::Server& server() { return server_; }

  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }
  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

inline json chat_reply(const std::string& text, const std::string& finish = "stop") {
  return json{{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", finish}}}},
              {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 2}, {"total_tokens", 5}}}};
}

}  // namespace testsupport
