#include "constalign/reflection.hpp"

#include "constalign/util.hpp"

namespace constalign::reflection {

using json = nlohmann::json;

std::string to_string(VerifyStatus status) {
  switch (status) {
    case VerifyStatus::Positive: return "positive";
    case VerifyStatus::Negative: return "negative";
    case VerifyStatus::Skipped: return "skipped";
  }
  return "skipped";
}

namespace {

VerifyStatus parse_status(std::string_view s) {
  if (s == "positive") return VerifyStatus::Positive;
  if (s == "negative") return VerifyStatus::Negative;
  return VerifyStatus::Skipped;
}

}  // namespace

std::uint64_t derive_order_seed(std::uint64_t run_seed, std::string_view record_id) {
  return run_seed ^ fnv1a64(record_id);
}

std::string render_reflection_instruction(const PromptSet& prompts, std::string_view constitution_text) {
  std::string out = prompts.reflection;
  replace_all(out, kConstitutionSlot, constitution_text);
  return out;
}

RevisionTrace self_reflect(const gateway::ModelClient& base, const PromptSet& prompts,
                           const redteam::AttackResult& attack, std::span<const oracle::Constitution> constitutions,
                           std::uint64_t order_seed, const gateway::GenerationParams& params, int iteration) {
  gateway::require_slot(base.handle(), gateway::Slot::Base);
  RevisionTrace trace;
  trace.record_id = attack.record_id;
  trace.question = attack.prompt.question;
  trace.iteration = iteration;
  trace.order_seed = order_seed;
  trace.original_response = attack.response.text;
  trace.final_response = attack.response.text;

  const auto order = seeded_permutation(constitutions.size(), order_seed);
  for (std::size_t idx : order) trace.constitution_order.push_back(constitutions[idx].id);

  for (std::size_t idx : order) {
    const auto& constitution = constitutions[idx];
    RevisionStep step;
    step.constitution_id = constitution.id;
    step.prompt_sent = render_reflection_instruction(prompts, constitution.text);
    step.response_before = trace.final_response;

    std::vector<gateway::ChatMessage> messages = attack.prompt.messages;
    messages.push_back(gateway::assistant_message(step.response_before));
    messages.push_back(gateway::user_message(step.prompt_sent));
    try {
      step.response_after = base.generate(messages, params).text;
    } catch (const Error& e) {
      throw ReflectionAborted(e, trace);
    }
    step.changed = step.response_after != step.response_before;
    trace.final_response = step.response_after;
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

oracle::Verdict verify_revision(const gateway::ModelClient& oracle, const PromptSet& prompts,
                                const redteam::AttackPrompt& attack_prompt, std::string_view final_response,
                                const gateway::GenerationParams& params) {
  return oracle::evaluate_text(oracle, prompts, attack_prompt.record_id, attack_prompt, final_response, params);
}

void to_json(json& j, const RevisionStep& s) {
  j = json{{"constitution_id", s.constitution_id},
           {"prompt_sent", s.prompt_sent},
           {"response_before", s.response_before},
           {"response_after", s.response_after},
           {"changed", s.changed}};
}

void from_json(const json& j, RevisionStep& s) {
  j.at("constitution_id").get_to(s.constitution_id);
  j.at("prompt_sent").get_to(s.prompt_sent);
  j.at("response_before").get_to(s.response_before);
  j.at("response_after").get_to(s.response_after);
  j.at("changed").get_to(s.changed);
}

void to_json(json& j, const RevisionTrace& t) {
  j = json{{"record_id", t.record_id},
           {"question", t.question},
           {"iteration", t.iteration},
           {"order_seed", t.order_seed},
           {"constitution_order", t.constitution_order},
           {"steps", t.steps},
           {"original_response", t.original_response},
           {"final_response", t.final_response},
           {"verified", to_string(t.verified)}};
}

void from_json(const json& j, RevisionTrace& t) {
  j.at("record_id").get_to(t.record_id);
  j.at("question").get_to(t.question);
  j.at("iteration").get_to(t.iteration);
  j.at("order_seed").get_to(t.order_seed);
  j.at("constitution_order").get_to(t.constitution_order);
  j.at("steps").get_to(t.steps);
  j.at("original_response").get_to(t.original_response);
  j.at("final_response").get_to(t.final_response);
  t.verified = parse_status(j.at("verified").get<std::string>());
}

}  // namespace constalign::reflection
