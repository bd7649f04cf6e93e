#pragma once

#include "constalign/corpus.hpp"
#include "constalign/gateway.hpp"
#include "constalign/oracle.hpp"
#include "constalign/prompts.hpp"
#include "constalign/redteam.hpp"
#include "constalign/registry.hpp"
#include "constalign/sft_bridge.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace constalign::controller {

enum class ReflectionScope { Batch, Registry };

std::string to_string(ReflectionScope scope);
ReflectionScope parse_reflection_scope(std::string_view name);

/// One row of metrics.csv.
struct IterationMetrics {
  int iteration = 0;
  std::size_t batch_size = 0;
  std::size_t negatives = 0;
  std::size_t ambiguous_verdicts = 0;
  std::size_t constitutions_proposed = 0;
  std::size_t constitutions_new_after_dedup = 0;
  std::size_t sft_examples = 0;
  bool trained = false;
  std::size_t post_reflection_negatives = 0;
  std::string model_ref;  // reference in effect after the iteration

  bool operator==(const IterationMetrics&) const = default;
};

struct IterationState {
  int iteration = 0;
  corpus::DatasetDescriptor corpus;
  corpus::BatchCursor cursor;
  std::string current_model_ref;
  registry::ConstitutionRegistry registry;
  std::vector<IterationMetrics> metrics_history;

  bool operator==(const IterationState&) const = default;
};

enum class Stage { RedTeam, Evaluate, Propose, Reflect, Emit, Train };

std::string to_string(Stage stage);

struct LoopConfig {
  std::filesystem::path run_dir;
  std::size_t redteam_batch_size = 8;
  gateway::GenerationParams generation;
  gateway::GenerationParams oracle_generation;
  ReflectionScope reflection_scope = ReflectionScope::Registry;
  std::uint64_t seed = 0;
  std::optional<int> max_iterations;
  std::size_t max_in_flight = 4;
  oracle::ProposalOptions proposal;
  sft::Hyperparams hyperparams;
};

using TrainerFn =
    std::function<sft::TrainRunReport(const sft::TrainerInvocation&, const std::filesystem::path& manifest_path)>;

TrainerFn process_trainer(sft::TrainerCommand command);

/// Collaborators of the loop. `on_stage`, when set, is called as each stage
/// begins.
struct Pipeline {
  std::shared_ptr<const gateway::ModelClient> base;
  std::shared_ptr<const gateway::ModelClient> oracle;
  PromptSet prompts;
  redteam::CoUTemplate attack_template = redteam::direct_template();
  std::shared_ptr<const corpus::Corpus> corpus;
  TrainerFn trainer;
  std::function<void(int iteration, Stage stage)> on_stage;
};

/// "name" -> "name@v1", "name@v3" -> "name@v4".
std::string next_model_ref(std::string_view current);

IterationState initial_state(const Pipeline& pipeline, const LoopConfig& config);

struct IterationOutcome {
  IterationState state;
  IterationMetrics metrics;
};

/// One pass: red-team -> evaluate -> [propose -> reflect -> emit -> train],
/// the bracketed part only when the batch produced a negative verdict.
/// Throws on stage failure; the input state is never modified.
IterationOutcome run_iteration(const IterationState& state, const Pipeline& pipeline, const LoopConfig& config);

struct RunReport {
  int iterations_run = 0;  // in this invocation
  int total_iterations = 0;
  bool complete = false;
  bool already_complete = false;
  std::string final_model_ref;
  std::size_t registry_size = 0;
  std::size_t iterations_trained = 0;
};

struct LoopResult {
  IterationState state;
  RunReport report;
};

/// Runs until the corpus is exhausted or max_iterations is reached, writing a
/// checkpoint, a metrics.csv row and the registry export after every
/// iteration. With `resume`, continues from the latest checkpoint in run_dir.
LoopResult run_loop(const Pipeline& pipeline, const LoopConfig& config, bool resume);

bool is_complete(const IterationState& state, const LoopConfig& config);

// Run directory layout.
std::filesystem::path checkpoints_dir(const std::filesystem::path& run_dir);
std::filesystem::path metrics_csv_path(const std::filesystem::path& run_dir);
std::filesystem::path registry_path(const std::filesystem::path& run_dir);
std::filesystem::path run_report_path(const std::filesystem::path& run_dir);

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int iteration);

void save_checkpoint(const IterationState& state, const std::filesystem::path& run_dir);
/// State after `iteration` iterations (0 = initial), if that checkpoint exists.
std::optional<IterationState> load_checkpoint(const std::filesystem::path& run_dir, int iteration);
std::optional<IterationState> load_latest_checkpoint(const std::filesystem::path& run_dir);

std::string metrics_csv_header();
std::string metrics_csv_row(const IterationMetrics& m);
std::string metrics_csv(std::span<const IterationMetrics> history);
std::vector<IterationMetrics> parse_metrics_csv(std::string_view text);

void to_json(nlohmann::json& j, const IterationMetrics& m);
void from_json(const nlohmann::json& j, IterationMetrics& m);
void to_json(nlohmann::json& j, const IterationState& s);
void from_json(const nlohmann::json& j, IterationState& s);
void to_json(nlohmann::json& j, const RunReport& r);

}  // namespace constalign::controller
