#pragma once

#include "constalign/corpus.hpp"
#include "constalign/gateway.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace constalign::redteam {

inline constexpr const char* kQuestionSlot = "{{QUESTION}}";

/// Attack wrapper. `preamble` must contain `slot_marker` exactly once; the
/// question is substituted there.
struct CoUTemplate {
  std::string name;
  std::string preamble;
  std::string slot_marker = kQuestionSlot;
  std::string version = "1";

  bool operator==(const CoUTemplate&) const = default;
};

/// Template consisting of the slot alone: the question is sent unwrapped.
CoUTemplate direct_template();

/// Loads a template file; the name is the file stem.
CoUTemplate load_template(const std::filesystem::path& path);

/// Resolves a template by name ("direct" or a file stem) inside `dir`, or by
/// path when `name_or_path` points at an existing file.
CoUTemplate resolve_template(const std::string& name_or_path, const std::filesystem::path& dir);

std::filesystem::path default_templates_dir();

struct AttackPrompt {
  std::string record_id;
  std::vector<gateway::ChatMessage> messages;
  std::string template_name;
  std::string question;  // the unwrapped record question

  bool operator==(const AttackPrompt&) const = default;
};

struct AttackResult {
  std::string record_id;
  AttackPrompt prompt;
  gateway::CompletionResult response;
};

/// Context turns (alternating user/assistant, parsed from Human:/Assistant:
/// markers when present) followed by the wrapped question as a user message.
AttackPrompt build_attack_prompt(const corpus::RedTeamRecord& record, const CoUTemplate& tmpl);

/// One result per prompt, order-aligned. Policy refusals are kept as
/// responses; any other per-slot error is returned in that slot.
std::vector<gateway::Outcome<AttackResult>> collect_responses(const gateway::ModelClient& base,
                                                              std::span<const AttackPrompt> prompts,
                                                              const gateway::GenerationParams& params,
                                                              std::size_t max_in_flight);

/// Flattens an attack prompt for display to the oracle: a lone user turn is
/// rendered as-is, multi-turn prompts as "User: ..." / "Assistant: ..." blocks.
std::string render_prompt_text(const AttackPrompt& prompt);

void to_json(nlohmann::json& j, const AttackPrompt& p);
void from_json(const nlohmann::json& j, AttackPrompt& p);
void to_json(nlohmann::json& j, const AttackResult& r);
void from_json(const nlohmann::json& j, AttackResult& r);

}  // namespace constalign::redteam
