#include "constalign/sft_bridge.hpp"

#include "constalign/util.hpp"

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>

extern char** environ;

namespace constalign::sft {

using json = nlohmann::json;

bool qualifies(const reflection::RevisionTrace& trace) {
  return trace.verified == reflection::VerifyStatus::Positive &&
         std::any_of(trace.steps.begin(), trace.steps.end(), [](const auto& s) { return s.changed; });
}

SftExample to_example(const reflection::RevisionTrace& trace) {
  return SftExample{trace.question, trace.final_response, trace.record_id, trace.iteration};
}

std::size_t emit_sft_dataset(std::span<const reflection::RevisionTrace> traces, const std::filesystem::path& path) {
  std::string body;
  std::size_t count = 0;
  for (const auto& trace : traces) {
    if (!qualifies(trace)) continue;
    if (trace.final_response.empty()) continue;
    body += json(to_example(trace)).dump();
    body += '\n';
    ++count;
  }
  if (count == 0) {
    std::error_code ec;
    std::filesystem::remove(path, ec);
    return 0;
  }
  write_text_file_atomic(path, body);
  return count;
}

std::vector<SftExample> read_sft_dataset(const std::filesystem::path& path) {
  std::vector<SftExample> out;
  for (const auto& line : split_lines(read_text_file(path))) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line).get<SftExample>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::FormatMismatch, path.string() + ": " + e.what());
    }
  }
  return out;
}

double reference_sft_loss(std::span<const double> token_logprobs) {
  double sum = 0.0;
  for (std::size_t i = 0; i < token_logprobs.size(); ++i) {
    const double lp = token_logprobs[i];
    if (std::isnan(lp) || lp > 0.0) {
      throw Error(ErrorCode::InvalidLogprob, "token " + std::to_string(i) + " has logprob " + std::to_string(lp));
    }
    sum += lp;
  }
  return -sum;
}

std::string to_string(TrainStatus status) {
  switch (status) {
    case TrainStatus::Succeeded: return "succeeded";
    case TrainStatus::Failed: return "failed";
    case TrainStatus::Skipped: return "skipped";
  }
  return "failed";
}

TrainRunReport skipped_report() { return TrainRunReport{}; }

json manifest_json(const TrainerInvocation& invocation, const std::filesystem::path& report_path) {
  return json{{"dataset_path", invocation.dataset_path.string()},
              {"base_model_ref", invocation.base_model_ref},
              {"output_model_ref", invocation.output_model_ref},
              {"hyperparams", invocation.hyperparams},
              {"report_path", report_path.string()}};
}

TrainRunReport parse_report(const json& j) {
  try {
    TrainRunReport r;
    const auto status = j.at("status").get<std::string>();
    if (status == "succeeded") {
      r.status = TrainStatus::Succeeded;
    } else if (status == "failed") {
      r.status = TrainStatus::Failed;
    } else if (status == "skipped") {
      r.status = TrainStatus::Skipped;
    } else {
      throw Error(ErrorCode::ReportParseError, "unknown status '" + status + "'");
    }
    if (j.contains("final_loss") && !j.at("final_loss").is_null()) {
      r.final_loss = j.at("final_loss").get<double>();
      if (!(*r.final_loss >= 0.0)) throw Error(ErrorCode::ReportParseError, "final_loss must be >= 0");
    }
    r.examples_seen = j.value("examples_seen", std::size_t{0});
    if (j.contains("output_model_ref") && !j.at("output_model_ref").is_null()) {
      r.output_model_ref = j.at("output_model_ref").get<std::string>();
    }
    if (r.status == TrainStatus::Succeeded && !r.output_model_ref) {
      throw Error(ErrorCode::ReportParseError, "succeeded report lacks output_model_ref");
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ReportParseError, e.what());
  }
}

TrainRunReport invoke_trainer(const TrainerInvocation& invocation, const TrainerCommand& command,
                              const std::filesystem::path& manifest_path) {
  if (command.argv.empty()) throw Error(ErrorCode::TrainerLaunchFailure, "trainer command is empty");
  auto report_path = manifest_path;
  report_path += ".report.json";
  auto stderr_path = manifest_path;
  stderr_path += ".stderr.log";
  std::error_code ec;
  std::filesystem::remove(report_path, ec);
  write_text_file_atomic(manifest_path, manifest_json(invocation, report_path).dump(2));

  std::vector<std::string> args = command.argv;
  bool substituted = false;
  for (auto& a : args) {
    if (a.find("{manifest}") != std::string::npos) {
      replace_all(a, "{manifest}", manifest_path.string());
      substituted = true;
    }
  }
  if (!substituted) args.push_back(manifest_path.string());
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, stderr_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) {
    throw Error(ErrorCode::TrainerLaunchFailure, args[0] + ": " + std::strerror(rc));
  }
  int status = 0;
  while (waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw Error(ErrorCode::TrainerLaunchFailure, "waitpid failed");
  }

  auto captured_stderr = [&] {
    try {
      return read_text_file(stderr_path);
    } catch (const Error&) {
      return std::string();
    }
  };
  if (!WIFEXITED(status)) {
    throw Error(ErrorCode::TrainerReportedFailure, "trainer terminated by a signal", captured_stderr());
  }
  if (WEXITSTATUS(status) == 127) {
    throw Error(ErrorCode::TrainerLaunchFailure, args[0] + ": command not found", captured_stderr());
  }
  if (WEXITSTATUS(status) != 0) {
    throw Error(ErrorCode::TrainerReportedFailure, "trainer exited with status " + std::to_string(WEXITSTATUS(status)),
                captured_stderr());
  }

  if (!std::filesystem::is_regular_file(report_path)) {
    throw Error(ErrorCode::ReportParseError, "trainer wrote no report at " + report_path.string());
  }
  json j = json::parse(read_text_file(report_path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ReportParseError, report_path.string() + " is not JSON");
  TrainRunReport report = parse_report(j);
  if (report.status == TrainStatus::Failed) {
    throw Error(ErrorCode::TrainerReportedFailure, "trainer reported failure", j.value("error", captured_stderr()));
  }
  return report;
}

void to_json(json& j, const SftExample& e) {
  j = json{{"prompt", e.prompt}, {"response", e.response}, {"record_id", e.record_id}, {"iteration", e.iteration}};
}

void from_json(const json& j, SftExample& e) {
  j.at("prompt").get_to(e.prompt);
  j.at("response").get_to(e.response);
  j.at("record_id").get_to(e.record_id);
  j.at("iteration").get_to(e.iteration);
}

void to_json(json& j, const Hyperparams& h) {
  j = json{{"learning_rate", h.learning_rate},
           {"train_batch_size", h.train_batch_size},
           {"max_seq_len", h.max_seq_len},
           {"epochs", h.epochs}};
}

void from_json(const json& j, Hyperparams& h) {
  h = Hyperparams{};
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(h.learning_rate);
  if (j.contains("train_batch_size")) j.at("train_batch_size").get_to(h.train_batch_size);
  if (j.contains("max_seq_len")) j.at("max_seq_len").get_to(h.max_seq_len);
  if (j.contains("epochs")) j.at("epochs").get_to(h.epochs);
}

void to_json(json& j, const TrainRunReport& r) {
  j = json{{"status", to_string(r.status)}, {"examples_seen", r.examples_seen}};
  j["final_loss"] = r.final_loss ? json(*r.final_loss) : json(nullptr);
  j["output_model_ref"] = r.output_model_ref ? json(*r.output_model_ref) : json(nullptr);
}

}  // namespace constalign::sft
