#include "constalign/oracle.hpp"

#include "constalign/error.hpp"
#include "constalign/util.hpp"

#include <regex>

namespace constalign::oracle {

using json = nlohmann::json;

std::string to_string(Label label) { return label == Label::Negative ? "negative" : "positive"; }

std::optional<Label> parse_label(std::string_view reply) {
  const std::string lower = to_lower(reply);
  if (lower.find("negative") != std::string::npos) return Label::Negative;
  if (lower.find("positive") != std::string::npos) return Label::Positive;
  return std::nullopt;
}

std::string normalize_constitution_text(std::string_view text) {
  std::string collapsed;
  for (const auto& word : split_whitespace(text)) {
    if (!collapsed.empty()) collapsed.push_back(' ');
    collapsed += word;
  }
  std::string out = to_lower(collapsed);
  while (!out.empty() && std::string_view(".!?;:,").find(out.back()) != std::string_view::npos) {
    out.pop_back();
    while (!out.empty() && out.back() == ' ') out.pop_back();
  }
  return out;
}

std::string constitution_id(std::string_view text) {
  return sha256_hex(normalize_constitution_text(text)).substr(0, 16);
}

Constitution make_constitution(std::string text, int iteration, std::vector<std::string> source_record_ids,
                               std::string transcript_ref) {
  Constitution c;
  c.text = std::string(trim(text));
  c.id = constitution_id(c.text);
  c.iteration = iteration;
  c.source_record_ids = std::move(source_record_ids);
  c.proposer_transcript_ref = std::move(transcript_ref);
  return c;
}

std::string render_evaluation_input(std::string_view prompt_text, std::string_view response_text) {
  std::string out = "Prompt:\n";
  out += prompt_text;
  out += "\n\nResponse:\n";
  out += response_text;
  return out;
}

std::string render_proposal_input(std::span<const redteam::AttackResult> negatives) {
  std::string out;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    if (!out.empty()) out += "\n\n";
    out += "Example " + std::to_string(i + 1) + "\n";
    out += render_evaluation_input(redteam::render_prompt_text(negatives[i].prompt), negatives[i].response.text);
  }
  return out;
}

Verdict evaluate_text(const gateway::ModelClient& oracle, const PromptSet& prompts, const std::string& record_id,
                      const redteam::AttackPrompt& attack_prompt, std::string_view response_text,
                      const gateway::GenerationParams& params, Transcript* transcript) {
  gateway::require_slot(oracle.handle(), gateway::Slot::Oracle);
  const std::vector<gateway::ChatMessage> messages{
      gateway::system_message(prompts.oracle_eval),
      gateway::user_message(render_evaluation_input(redteam::render_prompt_text(attack_prompt), response_text))};
  const auto reply = oracle.generate(messages, params);
  if (transcript) *transcript = Transcript{messages, reply.text};

  const auto label = parse_label(reply.text);
  if (!label) {
    throw Error(ErrorCode::AmbiguousVerdict, "record " + record_id + ": oracle reply has no verdict keyword",
                reply.text);
  }
  Verdict v;
  v.record_id = record_id;
  v.label = *label;
  v.raw_text = reply.text;
  // Whatever follows a leading "Positive"/"Negative" word is the rationale.
  static const std::regex kLead(R"(^\s*(positive|negative)\b[\s.:,!-]*)", std::regex::icase);
  std::string rest = std::regex_replace(reply.text, kLead, "", std::regex_constants::format_first_only);
  if (auto r = trim(rest); !r.empty() && r.size() < reply.text.size()) v.rationale = std::string(r);
  return v;
}

Verdict evaluate_response(const gateway::ModelClient& oracle, const PromptSet& prompts,
                          const redteam::AttackResult& attack, const gateway::GenerationParams& params) {
  return evaluate_text(oracle, prompts, attack.record_id, attack.prompt, attack.response.text, params);
}

ProposalResult propose_constitutions(const gateway::ModelClient& oracle, const PromptSet& prompts,
                                     std::span<const redteam::AttackResult> negatives, int iteration,
                                     const gateway::GenerationParams& params, const ProposalOptions& options,
                                     const std::string& transcript_ref) {
  gateway::require_slot(oracle.handle(), gateway::Slot::Oracle);
  if (negatives.empty()) throw Error(ErrorCode::PreconditionFailed, "propose_constitutions needs negatives");
  const std::size_t chunk = std::max<std::size_t>(1, options.max_negatives_per_call);

  ProposalResult result;
  for (std::size_t begin = 0, call = 0; begin < negatives.size(); begin += chunk, ++call) {
    const auto part = negatives.subspan(begin, std::min(chunk, negatives.size() - begin));
    std::vector<gateway::ChatMessage> messages{gateway::system_message(prompts.constitution_proposal),
                                               gateway::user_message(render_proposal_input(part))};
    const std::size_t chars = messages[0].content.size() + messages[1].content.size();
    if (options.max_context_chars > 0 && chars > options.max_context_chars) {
      throw Error(ErrorCode::ContextOverflow, std::to_string(part.size()) + " negatives need " +
                                                  std::to_string(chars) + " chars, limit " +
                                                  std::to_string(options.max_context_chars));
    }
    const auto reply = oracle.generate(messages, params);

    std::vector<std::string> ids;
    for (const auto& n : part) ids.push_back(n.record_id);
    const std::string ref = transcript_ref.empty() ? std::string() : transcript_ref + "#" + std::to_string(call);
    for (auto& text : parse_constitution_list(reply.text)) {
      result.constitutions.push_back(make_constitution(std::move(text), iteration, ids, ref));
    }
    if (!result.raw_text.empty()) result.raw_text += "\n\n";
    result.raw_text += reply.text;
    result.transcripts.push_back({std::move(messages), reply.text});
  }
  if (result.constitutions.empty()) {
    throw Error(ErrorCode::NoConstitutionsParsed, "proposer reply contains no principles", result.raw_text);
  }
  return result;
}

std::vector<std::string> parse_constitution_list(std::string_view raw_text) {
  static const std::regex kItem(R"(^\s*(?:\d{1,3}[.)](?!\d)|[-*+](?=\s)|•)\s*(.*)$)");
  static const std::regex kGuidance(
      R"(\b(should|must|never|always|avoid|ensure|do not|don't|refrain|prioriti[sz]e|strive|make sure|need to|ought)\b)",
      std::regex::icase);

  const auto lines = split_lines(raw_text);
  bool has_markers = false;
  for (const auto& line : lines) {
    if (std::regex_match(line, kItem)) {
      has_markers = true;
      break;
    }
  }

  std::vector<std::string> items;
  std::optional<std::string> current;
  auto close = [&] {
    if (current) {
      auto t = trim(*current);
      if (!t.empty()) items.emplace_back(t);
      current.reset();
    }
  };

  if (has_markers) {
    for (const auto& line : lines) {
      std::smatch m;
      if (std::regex_match(line, m, kItem)) {
        close();
        current = std::string(trim(m[1].str()));
      } else if (trim(line).empty()) {
        close();
      } else if (current) {
        *current += " ";
        *current += trim(line);
      }
    }
    close();
    return items;
  }

  std::string paragraph;
  auto close_paragraph = [&] {
    auto t = trim(paragraph);
    if (!t.empty() && std::regex_search(t.begin(), t.end(), kGuidance)) items.emplace_back(t);
    paragraph.clear();
  };
  for (const auto& line : lines) {
    if (trim(line).empty()) {
      close_paragraph();
    } else {
      if (!paragraph.empty()) paragraph += " ";
      paragraph += trim(line);
    }
  }
  close_paragraph();
  return items;
}

void to_json(json& j, const Verdict& v) {
  j = json{{"record_id", v.record_id}, {"label", to_string(v.label)}, {"raw_text", v.raw_text}};
  if (v.rationale) j["rationale"] = *v.rationale;
}

void from_json(const json& j, Verdict& v) {
  j.at("record_id").get_to(v.record_id);
  v.label = j.at("label").get<std::string>() == "negative" ? Label::Negative : Label::Positive;
  j.at("raw_text").get_to(v.raw_text);
  v.rationale = j.contains("rationale") ? std::optional(j.at("rationale").get<std::string>()) : std::nullopt;
}

void to_json(json& j, const Constitution& c) {
  j = json{{"id", c.id},
           {"text", c.text},
           {"iteration", c.iteration},
           {"source_record_ids", c.source_record_ids},
           {"proposer_transcript_ref", c.proposer_transcript_ref}};
}

void from_json(const json& j, Constitution& c) {
  j.at("id").get_to(c.id);
  j.at("text").get_to(c.text);
  j.at("iteration").get_to(c.iteration);
  j.at("source_record_ids").get_to(c.source_record_ids);
  j.at("proposer_transcript_ref").get_to(c.proposer_transcript_ref);
}

void to_json(json& j, const Transcript& t) { j = json{{"messages", t.messages}, {"reply", t.reply}}; }

void from_json(const json& j, Transcript& t) {
  j.at("messages").get_to(t.messages);
  j.at("reply").get_to(t.reply);
}

}  // namespace constalign::oracle
