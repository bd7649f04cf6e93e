#pragma once

#include "constalign/gateway.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace constalign::gateway {

/// One scripted behavior. A rule applies when every present matcher finds a
/// match (regex search) and the slot agrees; the first applicable rule wins.
///
/// Response templates may reference {{last_user}}, {{last_assistant}},
/// {{system}}, {{model}} and regex groups {{1}}..{{9}} of `match`.
struct MockRule {
  std::optional<Slot> slot;                  // nullopt = any slot
  std::string match = "[\\s\\S]*";          // over the last user message
  std::optional<std::string> system_match;   // over the system message
  std::optional<std::string> model_match;    // over the served model name
  std::vector<std::string> responses;        // one is chosen per (seed, input)
  // "unreachable", "auth", "refused", "rejected", "unsupported"
  std::optional<std::string> error;
};

/// Token log-probability table used by score_choice. Continuations are
/// tokenized on whitespace; unknown tokens take `default_logprob`.
struct LogprobTable {
  std::optional<Slot> slot;
  std::string prompt_match = "[\\s\\S]*";
  std::optional<std::string> model_match;
  std::map<std::string, double> tokens;
  double default_logprob = -10.0;
};

struct MockScript {
  std::vector<MockRule> rules;
  std::vector<LogprobTable> tables;
  std::uint64_t seed = 0;
};

MockScript parse_mock_script(const nlohmann::json& j);
MockScript load_mock_script(const std::filesystem::path& path);
nlohmann::json to_json(const MockScript& script);

/// Deterministic offline backend driven by a MockScript.
class MockClient final : public ModelClient {
 public:
  MockClient(ModelHandle handle, Slot slot, std::shared_ptr<const MockScript> script);

  const ModelHandle& handle() const override { return handle_; }
  CompletionResult generate(std::span<const ChatMessage> messages,
                            const GenerationParams& params) const override;
  ChoiceScore score_choice(std::string_view prompt, std::string_view continuation) const override;
  std::shared_ptr<ModelClient> with_model(std::string model_name) const override;

 private:
  struct CompiledRule {
    const MockRule* rule;
    std::regex match;
    std::optional<std::regex> system_match;
    std::optional<std::regex> model_match;
  };
  struct CompiledTable {
    const LogprobTable* table;
    std::regex prompt_match;
    std::optional<std::regex> model_match;
  };

  ModelHandle handle_;
  Slot slot_;
  std::shared_ptr<const MockScript> script_;
  std::vector<CompiledRule> rules_;
  std::vector<CompiledTable> tables_;
};

}  // namespace constalign::gateway
