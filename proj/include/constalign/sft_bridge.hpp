#pragma once

#include "constalign/reflection.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace constalign::sft {

struct SftExample {
  std::string prompt;    // plain question
  std::string response;  // final revised response
  std::string record_id;
  int iteration = 0;

  bool operator==(const SftExample&) const = default;
};

/// verified == Positive and at least one revision step changed the text.
bool qualifies(const reflection::RevisionTrace& trace);

SftExample to_example(const reflection::RevisionTrace& trace);

/// Writes one JSON line per qualifying trace and returns the count. With no
/// qualifying trace nothing is written (and a stale file at `path` is removed).
std::size_t emit_sft_dataset(std::span<const reflection::RevisionTrace> traces, const std::filesystem::path& path);

std::vector<SftExample> read_sft_dataset(const std::filesystem::path& path);

/// Negated sum of token log-probabilities: the autoregressive NLL of one
/// example. Throws InvalidLogprob for entries > 0 or NaN.
double reference_sft_loss(std::span<const double> token_logprobs);

/// Trainer hyperparameters. The defaults are the published full fine-tuning
/// settings (lr 2e-6, batch 2, max sequence length 512); epochs=1 is ours.
struct Hyperparams {
  double learning_rate = 2e-6;
  int train_batch_size = 2;
  int max_seq_len = 512;
  int epochs = 1;

  bool operator==(const Hyperparams&) const = default;
};

struct TrainerInvocation {
  std::filesystem::path dataset_path;
  Hyperparams hyperparams;
  std::string base_model_ref;
  std::string output_model_ref;
};

enum class TrainStatus { Succeeded, Failed, Skipped };

std::string to_string(TrainStatus status);

struct TrainRunReport {
  TrainStatus status = TrainStatus::Skipped;
  std::optional<double> final_loss;
  std::size_t examples_seen = 0;
  std::optional<std::string> output_model_ref;
};

TrainRunReport skipped_report();

/// External trainer process. Each argv element has "{manifest}" replaced by
/// the manifest path; if no element mentions it, the path is appended.
struct TrainerCommand {
  std::vector<std::string> argv;
};

/// Writes the manifest, runs the trainer and parses its report.
///
/// Files, next to `manifest_path`:
///   <manifest>              input: dataset_path, base/output model refs,
///                           hyperparams, report_path
///   <manifest>.report.json  output written by the trainer
///   <manifest>.stderr.log   captured stderr
TrainRunReport invoke_trainer(const TrainerInvocation& invocation, const TrainerCommand& command,
                              const std::filesystem::path& manifest_path);

nlohmann::json manifest_json(const TrainerInvocation& invocation, const std::filesystem::path& report_path);
TrainRunReport parse_report(const nlohmann::json& j);

void to_json(nlohmann::json& j, const SftExample& e);
void from_json(const nlohmann::json& j, SftExample& e);
void to_json(nlohmann::json& j, const Hyperparams& h);
void from_json(const nlohmann::json& j, Hyperparams& h);
void to_json(nlohmann::json& j, const TrainRunReport& r);

}  // namespace constalign::sft
