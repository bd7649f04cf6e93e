#include "constalign/config.hpp"
#include "constalign/error.hpp"

#include "test_support.hpp"

#include <doctest.h>

using namespace constalign;
using testsupport::json;
using testsupport::TempDir;

namespace {

json minimal() {
  return json{{"run_dir", "run"},
              {"endpoints",
               {{"base", {{"role_tag", "mock"}, {"model_name", "toy"}, {"mock_script", "script.json"}}},
                {"oracle", {{"role_tag", "mock"}, {"model_name", "oracle"}, {"mock_script", "script.json"}}}}},
              {"corpus", {{"path", "data/corpus.jsonl"}}},
              {"trainer", {{"command", {"bin/train", "{manifest}"}}}}};
}

std::string config_error(const json& j) {
  try {
    config::parse_run_config(j, "/cfg");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigInvalid);
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults of a minimal config") {
  const auto c = config::parse_run_config(minimal(), "/cfg");
  CHECK(c.base.model_name == "toy");
  CHECK(c.base.role_tag == gateway::RoleTag::Mock);
  CHECK(c.base.mock_script == "/cfg/script.json");
  CHECK_FALSE(c.judge.has_value());
  CHECK(c.corpus_path == "/cfg/data/corpus.jsonl");
  CHECK(c.corpus_format == corpus::DatasetFormat::GenericJsonl);
  CHECK_FALSE(c.corpus_strict);
  CHECK(c.attack_template == "direct");
  CHECK(c.loop.run_dir == "/cfg/run");
  CHECK(c.loop.redteam_batch_size == 8);
  CHECK(c.loop.generation.temperature == 0.7);
  CHECK(c.loop.generation.top_p == 0.9);
  CHECK(c.loop.oracle_generation == c.loop.generation);
  CHECK(c.loop.reflection_scope == controller::ReflectionScope::Registry);
  CHECK_FALSE(c.loop.max_iterations.has_value());
  CHECK(c.loop.max_in_flight == 4);
  CHECK(c.loop.hyperparams.learning_rate == 2e-6);
  CHECK(c.loop.hyperparams.train_batch_size == 2);
  CHECK(c.loop.hyperparams.max_seq_len == 512);
  CHECK(c.loop.hyperparams.epochs == 1);
  CHECK(c.trainer.argv == std::vector<std::string>{"/cfg/bin/train", "{manifest}"});
}

TEST_CASE("explicit values override defaults") {
  json j = minimal();
  j.merge_patch(json{{"redteam_batch_size", 3},
                     {"generation", {{"temperature", 0.2}, {"top_p", 0.5}, {"max_tokens", 64}}},
                     {"reflection_scope", "batch"},
                     {"max_iterations", 2},
                     {"seed", 99},
                     {"trainer", {{"learning_rate", 1e-5}, {"epochs", 3}}},
                     {"proposal", {{"max_negatives_per_call", 2}}},
                     {"retry", {{"max_retries", 1}, {"initial_backoff_ms", 5}}}});
  j["trainer"]["command"] = {"python3", "train.py"};
  const auto c = config::parse_run_config(j, "/cfg");
  CHECK(c.loop.redteam_batch_size == 3);
  CHECK(c.loop.generation.temperature == 0.2);
  CHECK(c.loop.generation.max_tokens == 64);
  CHECK(c.loop.reflection_scope == controller::ReflectionScope::Batch);
  CHECK(c.loop.max_iterations == 2);
  CHECK(c.loop.seed == 99);
  CHECK(c.loop.hyperparams.learning_rate == 1e-5);
  CHECK(c.loop.hyperparams.epochs == 3);
  CHECK(c.loop.proposal.max_negatives_per_call == 2);
  CHECK(c.retry.max_retries == 1);
  CHECK(c.retry.initial_backoff == std::chrono::milliseconds(5));
  CHECK(c.trainer.argv[0] == "python3");
}

TEST_CASE("missing and invalid fields name the field") {
  json j = minimal();
  j["endpoints"].erase("oracle");
  CHECK(config_error(j).find("endpoints.oracle") != std::string::npos);

  j = minimal();
  j["endpoints"]["base"]["api_key"] = "sk-secret";
  const auto msg = config_error(j);
  CHECK(msg.find("endpoints.base.api_key") != std::string::npos);
  CHECK(msg.find("sk-secret") == std::string::npos);

  j = minimal();
  j.erase("run_dir");
  CHECK(config_error(j).find("run_dir") != std::string::npos);

  j = minimal();
  j["endpoints"]["base"] = {{"role_tag", "base"}, {"model_name", "m"}};
  CHECK(config_error(j).find("endpoints.base.base_url") != std::string::npos);

  j = minimal();
  j["endpoints"]["base"] = {{"role_tag", "judge"}, {"model_name", "m"}, {"base_url", "http://localhost:1/v1"}};
  CHECK(config_error(j).find("endpoints.base.role_tag") != std::string::npos);

  j = minimal();
  j["redteam_batch_size"] = 0;
  CHECK(config_error(j).find("redteam_batch_size") != std::string::npos);

  j = minimal();
  j["generation"] = {{"top_p", 1.5}};
  CHECK(config_error(j).find("generation") != std::string::npos);

  j = minimal();
  j["trainer"]["command"] = json::array();
  CHECK(config_error(j).find("trainer.command") != std::string::npos);

  j = minimal();
  j["trainer"]["learning_rate"] = 0;
  CHECK(config_error(j).find("trainer.learning_rate") != std::string::npos);

  j = minimal();
  j["corpus"]["format"] = "csv";
  CHECK(config_error(j).find("corpus.format") != std::string::npos);

  j = minimal();
  j["max_iterations"] = -1;
  CHECK(config_error(j).find("max_iterations") != std::string::npos);

  j = minimal();
  j["seed"] = "seven";
  CHECK(config_error(j).find("seed") != std::string::npos);
}

TEST_CASE("load_run_config resolves paths against the config file") {
  TempDir d;
  const auto path = testsupport::write_file(d / "sub/config.json", "// comment\n" + minimal().dump());
  const auto c = config::load_run_config(path);
  CHECK(c.loop.run_dir == d.path() / "sub/run");
  CHECK(c.corpus_path == d.path() / "sub/data/corpus.jsonl");

  CHECK_THROWS_AS(config::load_run_config(d / "missing.json"), Error);
  const auto bad = testsupport::write_file(d / "bad.json", "{ not json");
  CHECK_THROWS_AS(config::load_run_config(bad), Error);
}

TEST_CASE("make_pipeline wires the loop fixture") {
  TempDir d;
  const auto c = config::parse_run_config(testsupport::loop_config(d / "run"), d.path());
  const auto p = config::make_pipeline(c);
  CHECK(p.corpus->records.size() == 18);
  CHECK(p.base->handle().model_name == "toy");
  CHECK(p.oracle->handle().model_name == "oracle-mock");
  CHECK(p.attack_template.name == "direct");
  CHECK(static_cast<bool>(p.trainer));
  CHECK_FALSE(std::filesystem::exists(d / "run"));
}

TEST_CASE("make_pipeline reports a missing corpus") {
  TempDir d;
  auto j = testsupport::loop_config(d / "run", d / "nope.jsonl");
  const auto c = config::parse_run_config(j, d.path());
  CHECK_THROWS_AS(config::make_pipeline(c), Error);
}
