#include "constalign/config.hpp"

#include "constalign/error.hpp"
#include "constalign/prompts.hpp"
#include "constalign/redteam.hpp"
#include "constalign/util.hpp"

namespace constalign::config {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::ConfigInvalid, field + ": " + why);
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base_dir / path).lexically_normal();
}

template <class T>
T get_field(const json& obj, const std::string& key, const std::string& field, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    invalid(field, "has the wrong type");
  }
}

gateway::ModelHandle parse_handle(const json& j, const std::string& field, const fs::path& base_dir) {
  if (!j.is_object()) invalid(field, "must be an object");
  if (j.contains("api_key")) invalid(field + ".api_key", "keys are read from the environment; set api_key_ref instead");
  gateway::ModelHandle h;
  h.endpoint_id = get_field<std::string>(j, "endpoint_id", field + ".endpoint_id", field.substr(field.rfind('.') + 1));
  try {
    h.role_tag = gateway::parse_role_tag(get_field<std::string>(j, "role_tag", field + ".role_tag", "mock"));
  } catch (const Error& e) {
    invalid(field + ".role_tag", e.what());
  }
  h.model_name = get_field<std::string>(j, "model_name", field + ".model_name", "");
  h.base_url = get_field<std::string>(j, "base_url", field + ".base_url", "");
  h.api_key_ref = get_field<std::string>(j, "api_key_ref", field + ".api_key_ref", "");
  h.scoring_fallback = get_field<bool>(j, "scoring_fallback", field + ".scoring_fallback", false);
  if (h.model_name.empty()) invalid(field + ".model_name", "required");
  if (h.role_tag == gateway::RoleTag::Mock) {
    const auto script = get_field<std::string>(j, "mock_script", field + ".mock_script", "");
    if (script.empty()) invalid(field + ".mock_script", "required for role_tag mock");
    h.mock_script = resolve(base_dir, script).string();
  } else if (h.base_url.empty()) {
    invalid(field + ".base_url", "required");
  }
  return h;
}

gateway::GenerationParams parse_params(const json& j, const std::string& field) {
  gateway::GenerationParams p;
  if (j.is_null()) return p;
  try {
    p = j.get<gateway::GenerationParams>();
    p.validate();
  } catch (const json::exception&) {
    invalid(field, "malformed generation parameters");
  } catch (const Error& e) {
    invalid(field, e.what());
  }
  return p;
}

}  // namespace

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) invalid("<root>", "config must be a JSON object");
  RunConfig c;

  if (!j.contains("endpoints") || !j.at("endpoints").is_object()) invalid("endpoints", "required");
  const auto& endpoints = j.at("endpoints");
  if (!endpoints.contains("base")) invalid("endpoints.base", "required");
  if (!endpoints.contains("oracle")) invalid("endpoints.oracle", "required");
  c.base = parse_handle(endpoints.at("base"), "endpoints.base", base_dir);
  c.oracle = parse_handle(endpoints.at("oracle"), "endpoints.oracle", base_dir);
  if (endpoints.contains("judge")) c.judge = parse_handle(endpoints.at("judge"), "endpoints.judge", base_dir);
  if (c.base.role_tag != gateway::RoleTag::Mock && c.base.role_tag != gateway::RoleTag::Base) {
    invalid("endpoints.base.role_tag", "must be base or mock");
  }
  if (c.oracle.role_tag != gateway::RoleTag::Mock && c.oracle.role_tag != gateway::RoleTag::Oracle) {
    invalid("endpoints.oracle.role_tag", "must be oracle or mock");
  }

  if (j.contains("retry")) {
    const auto& r = j.at("retry");
    c.retry.max_retries = get_field<int>(r, "max_retries", "retry.max_retries", c.retry.max_retries);
    c.retry.initial_backoff = std::chrono::milliseconds(
        get_field<long>(r, "initial_backoff_ms", "retry.initial_backoff_ms", c.retry.initial_backoff.count()));
    c.retry.timeout = std::chrono::seconds(get_field<long>(r, "timeout_s", "retry.timeout_s", c.retry.timeout.count()));
    if (c.retry.max_retries < 0) invalid("retry.max_retries", "must be >= 0");
  }

  if (!j.contains("corpus") || !j.at("corpus").is_object()) invalid("corpus", "required");
  const auto& corpus = j.at("corpus");
  const auto corpus_path = get_field<std::string>(corpus, "path", "corpus.path", "");
  if (corpus_path.empty()) invalid("corpus.path", "required");
  c.corpus_path = resolve(base_dir, corpus_path);
  try {
    c.corpus_format = corpus::parse_format(get_field<std::string>(corpus, "format", "corpus.format", "generic-jsonl"));
  } catch (const Error& e) {
    invalid("corpus.format", e.what());
  }
  c.corpus_strict = get_field<bool>(corpus, "strict", "corpus.strict", false);

  c.attack_template = get_field<std::string>(j, "template", "template", "direct");
  if (c.attack_template != "direct" && c.attack_template.find('/') != std::string::npos) {
    c.attack_template = resolve(base_dir, c.attack_template).string();
  }
  const auto templates_dir = get_field<std::string>(j, "templates_dir", "templates_dir", "");
  c.templates_dir = templates_dir.empty() ? redteam::default_templates_dir() : resolve(base_dir, templates_dir);
  const auto prompts_dir = get_field<std::string>(j, "prompts_dir", "prompts_dir", "");
  c.prompts_dir = prompts_dir.empty() ? PromptSet::default_dir() : resolve(base_dir, prompts_dir);

  auto& loop = c.loop;
  const auto run_dir = get_field<std::string>(j, "run_dir", "run_dir", "");
  if (run_dir.empty()) invalid("run_dir", "required");
  loop.run_dir = resolve(base_dir, run_dir);
  const long batch = get_field<long>(j, "redteam_batch_size", "redteam_batch_size", 8);
  if (batch <= 0) invalid("redteam_batch_size", "must be positive");
  loop.redteam_batch_size = static_cast<std::size_t>(batch);
  loop.generation = parse_params(j.value("generation", json()), "generation");
  loop.oracle_generation =
      j.contains("oracle_generation") ? parse_params(j.at("oracle_generation"), "oracle_generation") : loop.generation;
  try {
    loop.reflection_scope =
        controller::parse_reflection_scope(get_field<std::string>(j, "reflection_scope", "reflection_scope", "registry"));
  } catch (const Error& e) {
    invalid("reflection_scope", e.what());
  }
  loop.seed = get_field<std::uint64_t>(j, "seed", "seed", 0);
  if (j.contains("max_iterations") && !j.at("max_iterations").is_null()) {
    const int m = get_field<int>(j, "max_iterations", "max_iterations", 0);
    if (m < 0) invalid("max_iterations", "must be >= 0");
    loop.max_iterations = m;
  }
  const long in_flight = get_field<long>(j, "max_in_flight", "max_in_flight", 4);
  if (in_flight <= 0) invalid("max_in_flight", "must be >= 1");
  loop.max_in_flight = static_cast<std::size_t>(in_flight);
  if (j.contains("proposal")) {
    const auto& p = j.at("proposal");
    loop.proposal.max_negatives_per_call =
        get_field<std::size_t>(p, "max_negatives_per_call", "proposal.max_negatives_per_call", 8);
    loop.proposal.max_context_chars = get_field<std::size_t>(p, "max_context_chars", "proposal.max_context_chars", 0);
    if (loop.proposal.max_negatives_per_call == 0) invalid("proposal.max_negatives_per_call", "must be >= 1");
  }

  if (!j.contains("trainer") || !j.at("trainer").is_object()) invalid("trainer", "required");
  const auto& trainer = j.at("trainer");
  c.trainer.argv = get_field<std::vector<std::string>>(trainer, "command", "trainer.command", {});
  if (c.trainer.argv.empty()) invalid("trainer.command", "required (argv list)");
  if (c.trainer.argv[0].find('/') != std::string::npos) c.trainer.argv[0] = resolve(base_dir, c.trainer.argv[0]).string();
  try {
    loop.hyperparams = trainer.get<sft::Hyperparams>();
  } catch (const json::exception&) {
    invalid("trainer", "malformed hyperparameters");
  }
  if (!(loop.hyperparams.learning_rate > 0)) invalid("trainer.learning_rate", "must be positive");
  if (loop.hyperparams.train_batch_size <= 0) invalid("trainer.train_batch_size", "must be positive");
  if (loop.hyperparams.max_seq_len <= 0) invalid("trainer.max_seq_len", "must be positive");
  if (loop.hyperparams.epochs <= 0) invalid("trainer.epochs", "must be positive");
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::ConfigInvalid, "config file " + path.string() + " not found");
  json j = json::parse(read_text_file(path), nullptr, false, true);
  if (j.is_discarded()) throw Error(ErrorCode::ConfigInvalid, path.string() + ": not valid JSON");
  return parse_run_config(j, fs::absolute(path).parent_path());
}

controller::Pipeline make_pipeline(const RunConfig& config) {
  controller::Pipeline p;
  p.base = gateway::make_client(config.base, gateway::Slot::Base, config.retry);
  p.oracle = gateway::make_client(config.oracle, gateway::Slot::Oracle, config.retry);
  p.prompts = PromptSet::load(config.prompts_dir);
  p.attack_template = redteam::resolve_template(config.attack_template, config.templates_dir);
  p.corpus = std::make_shared<const corpus::Corpus>(
      corpus::load_dataset(config.corpus_path, config.corpus_format, {config.corpus_strict}));
  p.trainer = controller::process_trainer(config.trainer);
  return p;
}

}  // namespace constalign::config
