#include "constalign/redteam.hpp"

#include "constalign/error.hpp"
#include "constalign/util.hpp"

namespace constalign::redteam {

using json = nlohmann::json;
using gateway::ChatMessage;
using gateway::Role;

CoUTemplate direct_template() { return CoUTemplate{"direct", kQuestionSlot, kQuestionSlot, "1"}; }

CoUTemplate load_template(const std::filesystem::path& path) {
  CoUTemplate t;
  t.name = path.stem().string();
  t.preamble = read_text_file(path);
  t.version = sha256_hex(t.preamble).substr(0, 12);
  const auto n = count_occurrences(t.preamble, t.slot_marker);
  if (n != 1) {
    throw Error(ErrorCode::TemplateSlotMissing,
                path.string() + " must contain " + t.slot_marker + " exactly once (found " + std::to_string(n) + ")");
  }
  return t;
}

std::filesystem::path default_templates_dir() { return CONSTALIGN_TEMPLATES_DIR; }

CoUTemplate resolve_template(const std::string& name_or_path, const std::filesystem::path& dir) {
  if (name_or_path.empty() || name_or_path == "direct") return direct_template();
  if (std::filesystem::is_regular_file(name_or_path)) return load_template(name_or_path);
  const auto candidate = dir / (name_or_path + ".txt");
  if (std::filesystem::is_regular_file(candidate)) return load_template(candidate);
  throw Error(ErrorCode::FileNotFound, "template '" + name_or_path + "' not found in " + dir.string());
}

namespace {

std::vector<ChatMessage> context_turns(std::string_view context) {
  struct Marker {
    std::string_view text;
    Role role;
  };
  static constexpr Marker kMarkers[] = {{"Human:", Role::User}, {"Assistant:", Role::Assistant}};

  std::vector<ChatMessage> turns;
  std::optional<Role> current;
  std::string buffer;
  auto flush = [&] {
    auto body = trim(buffer);
    if (current && !body.empty()) turns.push_back({*current, std::string(body)});
    buffer.clear();
  };

  for (const auto& line : split_lines(context)) {
    const Marker* hit = nullptr;
    for (const auto& m : kMarkers) {
      if (std::string_view(line).substr(0, m.text.size()) == m.text) hit = &m;
    }
    if (hit) {
      flush();
      current = hit->role;
      buffer = line.substr(hit->text.size());
    } else {
      if (!current) current = Role::User;
      buffer += "\n" + line;
    }
  }
  flush();
  return turns;
}

}  // namespace

AttackPrompt build_attack_prompt(const corpus::RedTeamRecord& record, const CoUTemplate& tmpl) {
  const auto n = count_occurrences(tmpl.preamble, tmpl.slot_marker);
  if (n != 1) {
    throw Error(ErrorCode::TemplateSlotMissing, "template '" + tmpl.name + "' contains " + tmpl.slot_marker + " " +
                                                    std::to_string(n) + " times");
  }
  AttackPrompt prompt;
  prompt.record_id = record.id;
  prompt.template_name = tmpl.name;
  prompt.question = record.question;
  if (record.context) prompt.messages = context_turns(*record.context);

  std::string wrapped = tmpl.preamble;
  wrapped.replace(wrapped.find(tmpl.slot_marker), tmpl.slot_marker.size(), record.question);
  prompt.messages.push_back(gateway::user_message(std::move(wrapped)));
  return prompt;
}

std::vector<gateway::Outcome<AttackResult>> collect_responses(const gateway::ModelClient& base,
                                                              std::span<const AttackPrompt> prompts,
                                                              const gateway::GenerationParams& params,
                                                              std::size_t max_in_flight) {
  gateway::require_slot(base.handle(), gateway::Slot::Base);
  return gateway::map_bounded<AttackResult>(prompts.size(), max_in_flight, [&](std::size_t i) {
    AttackResult result;
    result.record_id = prompts[i].record_id;
    result.prompt = prompts[i];
    try {
      result.response = base.generate(prompts[i].messages, params);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ContentRefused) throw;
      result.response.text = e.detail().empty() ? std::string(e.what()) : e.detail();
      result.response.refused = true;
      result.response.endpoint_id = base.handle().endpoint_id;
    }
    return result;
  });
}

std::string render_prompt_text(const AttackPrompt& prompt) {
  if (prompt.messages.size() == 1) return prompt.messages.front().content;
  std::string out;
  for (const auto& m : prompt.messages) {
    if (!out.empty()) out += "\n\n";
    out += m.role == Role::Assistant ? "Assistant: " : m.role == Role::System ? "System: " : "User: ";
    out += m.content;
  }
  return out;
}

void to_json(json& j, const AttackPrompt& p) {
  j = json{{"record_id", p.record_id},
           {"messages", p.messages},
           {"template_name", p.template_name},
           {"question", p.question}};
}

void from_json(const json& j, AttackPrompt& p) {
  j.at("record_id").get_to(p.record_id);
  j.at("messages").get_to(p.messages);
  j.at("template_name").get_to(p.template_name);
  j.at("question").get_to(p.question);
}

void to_json(json& j, const AttackResult& r) {
  j = json{{"record_id", r.record_id}, {"prompt", r.prompt}, {"response", r.response}};
}

void from_json(const json& j, AttackResult& r) {
  j.at("record_id").get_to(r.record_id);
  j.at("prompt").get_to(r.prompt);
  j.at("response").get_to(r.response);
}

}  // namespace constalign::redteam
