#pragma once

#include "constalign/gateway.hpp"
#include "constalign/prompts.hpp"
#include "constalign/redteam.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace constalign::oracle {

enum class Label { Positive, Negative };

std::string to_string(Label label);

struct Verdict {
  std::string record_id;
  Label label = Label::Positive;
  std::string raw_text;
  std::optional<std::string> rationale;
};

/// Case-insensitive keyword rule: "negative" wins over "positive" when both
/// occur; neither yields nullopt.
std::optional<Label> parse_label(std::string_view reply);

struct Constitution {
  std::string id;
  std::string text;
  int iteration = 0;
  std::vector<std::string> source_record_ids;
  std::string proposer_transcript_ref;

  bool operator==(const Constitution&) const = default;
};

/// Lowercase, whitespace collapsed, terminal punctuation stripped.
std::string normalize_constitution_text(std::string_view text);
/// First 16 hex digits of SHA-256 over the normalized text.
std::string constitution_id(std::string_view text);

Constitution make_constitution(std::string text, int iteration, std::vector<std::string> source_record_ids,
                               std::string transcript_ref);

/// One oracle exchange, persisted for audit.
struct Transcript {
  std::vector<gateway::ChatMessage> messages;
  std::string reply;
};

struct ProposalResult {
  std::vector<Constitution> constitutions;
  std::string raw_text;  // replies of all calls, blank-line separated
  std::vector<Transcript> transcripts;
};

struct ProposalOptions {
  std::size_t max_negatives_per_call = 8;
  std::size_t max_context_chars = 0;  // 0 disables the check
};

/// The user turn carrying one (prompt, response) pair to the oracle.
std::string render_evaluation_input(std::string_view prompt_text, std::string_view response_text);
/// The user turn carrying a batch of negative pairs to the proposer.
std::string render_proposal_input(std::span<const redteam::AttackResult> negatives);

/// Sends the evaluation fixture as system message plus the (prompt, response)
/// pair; throws AmbiguousVerdict (reply in Error::detail) if no keyword is found.
Verdict evaluate_response(const gateway::ModelClient& oracle, const PromptSet& prompts,
                          const redteam::AttackResult& attack, const gateway::GenerationParams& params);

/// Same prompt path as evaluate_response, for an arbitrary response text.
Verdict evaluate_text(const gateway::ModelClient& oracle, const PromptSet& prompts, const std::string& record_id,
                      const redteam::AttackPrompt& attack_prompt, std::string_view response_text,
                      const gateway::GenerationParams& params, Transcript* transcript = nullptr);

/// Sends the proposal fixture plus the negative pairs, chunked by
/// options.max_negatives_per_call; each constitution is tagged with
/// `iteration` and the record ids of its chunk. `transcript_ref` names where
/// the caller persists ProposalResult::transcripts.
ProposalResult propose_constitutions(const gateway::ModelClient& oracle, const PromptSet& prompts,
                                     std::span<const redteam::AttackResult> negatives, int iteration,
                                     const gateway::GenerationParams& params, const ProposalOptions& options = {},
                                     const std::string& transcript_ref = {});

/// Extracts principles from a proposer reply.
///
/// Numbered ("1." / "1)") and bulleted ("-", "*", "•") items are taken in
/// order with markers stripped; unmarked lines directly below an item
/// continue it, anything else outside items is ignored. Without any list
/// markers, each blank-line separated paragraph that reads as guidance
/// (should, must, never, avoid, ensure, ...) becomes one item.
std::vector<std::string> parse_constitution_list(std::string_view raw_text);

void to_json(nlohmann::json& j, const Verdict& v);
void from_json(const nlohmann::json& j, Verdict& v);
void to_json(nlohmann::json& j, const Constitution& c);
void from_json(const nlohmann::json& j, Constitution& c);
void to_json(nlohmann::json& j, const Transcript& t);
void from_json(const nlohmann::json& j, Transcript& t);

}  // namespace constalign::oracle
