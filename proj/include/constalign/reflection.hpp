#pragma once

#include "constalign/gateway.hpp"
#include "constalign/oracle.hpp"
#include "constalign/prompts.hpp"
#include "constalign/redteam.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace constalign::reflection {

enum class VerifyStatus { Positive, Negative, Skipped };

std::string to_string(VerifyStatus status);

struct RevisionStep {
  std::string constitution_id;
  std::string prompt_sent;
  std::string response_before;
  std::string response_after;
  bool changed = false;

  bool operator==(const RevisionStep&) const = default;
};

struct RevisionTrace {
  std::string record_id;
  std::string question;  // plain record question, wrapper stripped
  int iteration = 0;
  std::uint64_t order_seed = 0;
  std::vector<std::string> constitution_order;
  std::vector<RevisionStep> steps;
  std::string original_response;
  std::string final_response;
  VerifyStatus verified = VerifyStatus::Skipped;

  bool operator==(const RevisionTrace&) const = default;
};

/// Thrown when a step fails; carries the steps completed so far.
class ReflectionAborted : public Error {
 public:
  ReflectionAborted(const Error& cause, RevisionTrace partial)
      : Error(ErrorCode::ReflectionAborted, cause.what(), cause.detail()), partial_(std::move(partial)) {}

  const RevisionTrace& partial() const noexcept { return partial_; }

 private:
  RevisionTrace partial_;
};

/// Per-record shuffle seed: the run seed mixed with the record id.
std::uint64_t derive_order_seed(std::uint64_t run_seed, std::string_view record_id);

/// The reflection instruction for one constitution.
std::string render_reflection_instruction(const PromptSet& prompts, std::string_view constitution_text);

/// Revises attack.response against each constitution in a seeded random
/// order. Each step sends the attack prompt, the current response as the
/// assistant turn and the reflection instruction; the reply becomes the
/// current response. The returned trace has verified == Skipped.
RevisionTrace self_reflect(const gateway::ModelClient& base, const PromptSet& prompts,
                           const redteam::AttackResult& attack, std::span<const oracle::Constitution> constitutions,
                           std::uint64_t order_seed, const gateway::GenerationParams& params, int iteration = 0);

/// Re-evaluates a revised response with the oracle evaluation prompt.
oracle::Verdict verify_revision(const gateway::ModelClient& oracle, const PromptSet& prompts,
                                const redteam::AttackPrompt& attack_prompt, std::string_view final_response,
                                const gateway::GenerationParams& params);

void to_json(nlohmann::json& j, const RevisionStep& s);
void from_json(const nlohmann::json& j, RevisionStep& s);
void to_json(nlohmann::json& j, const RevisionTrace& t);
void from_json(const nlohmann::json& j, RevisionTrace& t);

}  // namespace constalign::reflection
