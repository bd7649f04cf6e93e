#pragma once

#include "constalign/controller.hpp"
#include "constalign/corpus.hpp"
#include "constalign/gateway.hpp"
#include "constalign/sft_bridge.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace constalign::config {

/// Everything a run needs. Loaded from one JSON file; relative paths are
/// resolved against the file's directory. API keys are never stored here,
/// only the names of the environment variables that hold them.
struct RunConfig {
  gateway::ModelHandle base;
  gateway::ModelHandle oracle;
  std::optional<gateway::ModelHandle> judge;
  gateway::RetryPolicy retry;

  std::filesystem::path corpus_path;
  corpus::DatasetFormat corpus_format = corpus::DatasetFormat::GenericJsonl;
  bool corpus_strict = false;

  std::string attack_template = "direct";
  std::filesystem::path templates_dir;
  std::filesystem::path prompts_dir;

  sft::TrainerCommand trainer;
  controller::LoopConfig loop;
};

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Loads the corpus, prompt fixtures and template and connects the clients.
/// Performs no network traffic.
controller::Pipeline make_pipeline(const RunConfig& config);

}  // namespace constalign::config
