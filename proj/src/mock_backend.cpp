#include "constalign/mock_backend.hpp"

#include "constalign/util.hpp"

namespace constalign::gateway {

using json = nlohmann::json;

namespace {

std::optional<Slot> parse_slot(const json& j) {
  if (!j.contains("slot")) return std::nullopt;
  const auto name = j.at("slot").get<std::string>();
  if (name == "*" || name == "any") return std::nullopt;
  if (name == "base") return Slot::Base;
  if (name == "oracle") return Slot::Oracle;
  if (name == "judge") return Slot::Judge;
  throw Error(ErrorCode::MockScriptInvalid, "unknown slot '" + name + "'");
}

std::regex compile(const std::string& pattern) {
  try {
    return std::regex(pattern, std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw Error(ErrorCode::MockScriptInvalid, "bad regex '" + pattern + "': " + e.what());
  }
}

bool slot_matches(const std::optional<Slot>& wanted, Slot actual) {
  return !wanted || *wanted == actual;
}

int count_tokens(std::string_view text) { return static_cast<int>(split_whitespace(text).size()); }

}  // namespace

MockScript parse_mock_script(const json& j) {
  MockScript script;
  try {
    script.seed = j.value("seed", std::uint64_t{0});
    for (const auto& r : j.value("rules", json::array())) {
      MockRule rule;
      rule.slot = parse_slot(r);
      if (r.contains("match")) rule.match = r.at("match").get<std::string>();
      if (r.contains("system_match")) rule.system_match = r.at("system_match").get<std::string>();
      if (r.contains("model_match")) rule.model_match = r.at("model_match").get<std::string>();
      if (r.contains("response")) rule.responses.push_back(r.at("response").get<std::string>());
      if (r.contains("responses")) {
        for (const auto& s : r.at("responses")) rule.responses.push_back(s.get<std::string>());
      }
      if (r.contains("error")) rule.error = r.at("error").get<std::string>();
      if (rule.responses.empty() && !rule.error) {
        throw Error(ErrorCode::MockScriptInvalid, "rule without response or error");
      }
      script.rules.push_back(std::move(rule));
    }
    for (const auto& t : j.value("logprob_tables", json::array())) {
      LogprobTable table;
      table.slot = parse_slot(t);
      if (t.contains("prompt_match")) table.prompt_match = t.at("prompt_match").get<std::string>();
      if (t.contains("model_match")) table.model_match = t.at("model_match").get<std::string>();
      table.tokens = t.value("tokens", std::map<std::string, double>{});
      table.default_logprob = t.value("default", -10.0);
      script.tables.push_back(std::move(table));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MockScriptInvalid, e.what());
  }
  return script;
}

MockScript load_mock_script(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::MockScriptInvalid, path.string() + ": invalid JSON");
  return parse_mock_script(j);
}

json to_json(const MockScript& script) {
  auto slot_name = [](const std::optional<Slot>& s) { return s ? to_string(*s) : std::string("*"); };
  json rules = json::array();
  for (const auto& r : script.rules) {
    json jr{{"slot", slot_name(r.slot)}, {"match", r.match}, {"responses", r.responses}};
    if (r.system_match) jr["system_match"] = *r.system_match;
    if (r.model_match) jr["model_match"] = *r.model_match;
    if (r.error) jr["error"] = *r.error;
    rules.push_back(std::move(jr));
  }
  json tables = json::array();
  for (const auto& t : script.tables) {
    json jt{{"slot", slot_name(t.slot)}, {"prompt_match", t.prompt_match}, {"tokens", t.tokens},
            {"default", t.default_logprob}};
    if (t.model_match) jt["model_match"] = *t.model_match;
    tables.push_back(std::move(jt));
  }
  return json{{"seed", script.seed}, {"rules", rules}, {"logprob_tables", tables}};
}

MockClient::MockClient(ModelHandle handle, Slot slot, std::shared_ptr<const MockScript> script)
    : handle_(std::move(handle)), slot_(slot), script_(std::move(script)) {
  for (const auto& rule : script_->rules) {
    if (!slot_matches(rule.slot, slot_)) continue;
    CompiledRule c{&rule, compile(rule.match), std::nullopt, std::nullopt};
    if (rule.system_match) c.system_match = compile(*rule.system_match);
    if (rule.model_match) c.model_match = compile(*rule.model_match);
    rules_.push_back(std::move(c));
  }
  for (const auto& table : script_->tables) {
    if (!slot_matches(table.slot, slot_)) continue;
    CompiledTable c{&table, compile(table.prompt_match), std::nullopt};
    if (table.model_match) c.model_match = compile(*table.model_match);
    tables_.push_back(std::move(c));
  }
}

CompletionResult MockClient::generate(std::span<const ChatMessage> messages,
                                      const GenerationParams& params) const {
  std::string last_user, last_assistant, system;
  int prompt_tokens = 0;
  for (const auto& m : messages) {
    prompt_tokens += count_tokens(m.content);
    switch (m.role) {
      case Role::User: last_user = m.content; break;
      case Role::Assistant: last_assistant = m.content; break;
      case Role::System:
        if (system.empty()) system = m.content;
        break;
    }
  }

  for (const auto& c : rules_) {
    std::smatch groups;
    if (!std::regex_search(last_user, groups, c.match)) continue;
    if (c.system_match && !std::regex_search(system, *c.system_match)) continue;
    if (c.model_match && !std::regex_search(handle_.model_name, *c.model_match)) continue;

    const MockRule& rule = *c.rule;
    std::string text;
    if (!rule.responses.empty()) {
      std::size_t pick = 0;
      if (rule.responses.size() > 1) {
        const std::uint64_t mix = script_->seed ^ static_cast<std::uint64_t>(params.seed.value_or(0)) ^
                                  fnv1a64(last_user);
        pick = static_cast<std::size_t>(mix % rule.responses.size());
      }
      text = rule.responses[pick];
      replace_all(text, "{{last_user}}", last_user);
      replace_all(text, "{{last_assistant}}", last_assistant);
      replace_all(text, "{{system}}", system);
      replace_all(text, "{{model}}", handle_.model_name);
      for (std::size_t g = 1; g < groups.size() && g <= 9; ++g) {
        replace_all(text, "{{" + std::to_string(g) + "}}", groups[g].str());
      }
    }

    if (rule.error) {
      const std::string& kind = *rule.error;
      if (kind == "refused") throw Error(ErrorCode::ContentRefused, "mock policy block", text);
      if (kind == "auth") throw Error(ErrorCode::AuthFailure, "mock auth failure");
      if (kind == "rejected") throw Error(ErrorCode::EndpointRejected, "mock rejected request");
      if (kind == "unsupported") throw Error(ErrorCode::ScoringUnsupported, "mock scoring unsupported");
      throw Error(ErrorCode::EndpointUnreachable, "mock endpoint unreachable");
    }

    CompletionResult result;
    result.endpoint_id = handle_.endpoint_id;
    result.usage.prompt_tokens = prompt_tokens;
    auto tokens = split_whitespace(text);
    if (static_cast<int>(tokens.size()) > params.max_tokens) {
      tokens.resize(static_cast<std::size_t>(params.max_tokens));
      std::string truncated;
      for (const auto& t : tokens) {
        if (!truncated.empty()) truncated.push_back(' ');
        truncated += t;
      }
      result.text = std::move(truncated);
      result.finish_reason = FinishReason::Length;
      result.usage.completion_tokens = params.max_tokens;
    } else {
      result.text = std::move(text);
      result.usage.completion_tokens = static_cast<int>(tokens.size());
    }
    return result;
  }
  throw Error(ErrorCode::MockScriptInvalid,
              "no " + to_string(slot_) + " rule matches last user message: " + last_user.substr(0, 120));
}

ChoiceScore MockClient::score_choice(std::string_view prompt, std::string_view continuation) const {
  const std::string prompt_str(prompt);
  for (const auto& c : tables_) {
    if (!std::regex_search(prompt_str, c.prompt_match)) continue;
    if (c.model_match && !std::regex_search(handle_.model_name, *c.model_match)) continue;
    ChoiceScore score;
    score.continuation = std::string(continuation);
    for (const auto& token : split_whitespace(continuation)) {
      auto it = c.table->tokens.find(token);
      score.log_likelihood += it != c.table->tokens.end() ? it->second : c.table->default_logprob;
      ++score.token_count;
    }
    return score;
  }
  throw Error(ErrorCode::ScoringUnsupported, "no logprob table matches the prompt");
}

std::shared_ptr<ModelClient> MockClient::with_model(std::string model_name) const {
  ModelHandle h = handle_;
  h.model_name = std::move(model_name);
  return std::make_shared<MockClient>(std::move(h), slot_, script_);
}

}  // namespace constalign::gateway
