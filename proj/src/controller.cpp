#include "constalign/controller.hpp"

#include "constalign/reflection.hpp"
#include "constalign/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>
#include <unordered_set>

namespace constalign::controller {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(ReflectionScope scope) { return scope == ReflectionScope::Batch ? "batch" : "registry"; }

ReflectionScope parse_reflection_scope(std::string_view name) {
  if (name == "batch") return ReflectionScope::Batch;
  if (name == "registry") return ReflectionScope::Registry;
  throw Error(ErrorCode::ConfigInvalid, "reflection_scope must be 'batch' or 'registry'");
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::RedTeam: return "red-team";
    case Stage::Evaluate: return "evaluate";
    case Stage::Propose: return "propose";
    case Stage::Reflect: return "reflect";
    case Stage::Emit: return "emit";
    case Stage::Train: return "train";
  }
  return "unknown";
}

TrainerFn process_trainer(sft::TrainerCommand command) {
  return [command = std::move(command)](const sft::TrainerInvocation& inv, const fs::path& manifest) {
    return sft::invoke_trainer(inv, command, manifest);
  };
}

std::string next_model_ref(std::string_view current) {
  static const std::regex kVersioned(R"(^([\s\S]*)@v(\d+)$)");
  const std::string s(current);
  std::smatch m;
  if (std::regex_match(s, m, kVersioned)) {
    return m[1].str() + "@v" + std::to_string(std::stoll(m[2].str()) + 1);
  }
  return s + "@v1";
}

fs::path checkpoints_dir(const fs::path& run_dir) { return run_dir / "checkpoints"; }
fs::path metrics_csv_path(const fs::path& run_dir) { return run_dir / "metrics.csv"; }
fs::path registry_path(const fs::path& run_dir) { return run_dir / "registry.json"; }
fs::path run_report_path(const fs::path& run_dir) { return run_dir / "run_report.json"; }

namespace {

std::string iter_tag(int iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter-%04d", iteration);
  return buf;
}

void notify(const Pipeline& p, int iteration, Stage stage) {
  if (p.on_stage) p.on_stage(iteration, stage);
}

template <class T>
void write_jsonl(const fs::path& path, const std::vector<T>& items) {
  std::string body;
  for (const auto& item : items) {
    body += json(item).dump();
    body += '\n';
  }
  write_text_file_atomic(path, body);
}

// Rethrows the first slot error, so a failed stage aborts the iteration.
template <class T>
std::vector<T> unwrap_all(std::vector<gateway::Outcome<T>>&& outcomes) {
  std::vector<T> out;
  out.reserve(outcomes.size());
  for (auto& o : outcomes) {
    if (o.error) throw *o.error;
    out.push_back(std::move(*o.value));
  }
  return out;
}

}  // namespace

IterationState initial_state(const Pipeline& pipeline, const LoopConfig& config) {
  IterationState s;
  s.corpus = pipeline.corpus->descriptor;
  s.cursor = corpus::make_cursor(config.redteam_batch_size);
  s.current_model_ref = pipeline.base->handle().model_name;
  return s;
}

IterationOutcome run_iteration(const IterationState& state, const Pipeline& pipeline, const LoopConfig& config) {
  IterationOutcome out{state, {}};
  IterationState& next = out.state;
  IterationMetrics& metrics = out.metrics;
  const int iteration = state.iteration;
  metrics.iteration = iteration;

  const fs::path trace_dir = config.run_dir / "traces" / iter_tag(iteration);
  const auto base = pipeline.base->with_model(state.current_model_ref);
  const auto& oracle_client = *pipeline.oracle;

  // red-team
  notify(pipeline, iteration, Stage::RedTeam);
  const auto batch = corpus::next_batch(*pipeline.corpus, next.cursor);
  if (batch.empty()) throw Error(ErrorCode::PreconditionFailed, "corpus exhausted before iteration " + iter_tag(iteration));
  metrics.batch_size = batch.size();
  std::vector<redteam::AttackPrompt> prompts;
  for (const auto& record : batch) prompts.push_back(redteam::build_attack_prompt(record, pipeline.attack_template));
  const auto attacks =
      unwrap_all(redteam::collect_responses(*base, prompts, config.generation, config.max_in_flight));
  write_jsonl(trace_dir / "attacks.jsonl", attacks);

  // evaluate
  notify(pipeline, iteration, Stage::Evaluate);
  auto verdict_slots = gateway::map_bounded<oracle::Verdict>(attacks.size(), config.max_in_flight, [&](std::size_t i) {
    return oracle::evaluate_response(oracle_client, pipeline.prompts, attacks[i], config.oracle_generation);
  });
  std::vector<redteam::AttackResult> negatives;
  json verdict_log = json::array();
  for (std::size_t i = 0; i < verdict_slots.size(); ++i) {
    auto& slot = verdict_slots[i];
    if (slot.error) {
      if (slot.error->code() != ErrorCode::AmbiguousVerdict) throw *slot.error;
      ++metrics.ambiguous_verdicts;
      verdict_log.push_back({{"record_id", attacks[i].record_id}, {"label", "ambiguous"}, {"raw_text", slot.error->detail()}});
      continue;
    }
    verdict_log.push_back(*slot.value);
    if (slot.value->label == oracle::Label::Negative) negatives.push_back(attacks[i]);
  }
  {
    std::string body;
    for (const auto& v : verdict_log) body += v.dump() + "\n";
    write_text_file_atomic(trace_dir / "verdicts.jsonl", body);
  }
  metrics.negatives = negatives.size();

  if (negatives.empty()) {
    metrics.model_ref = next.current_model_ref;
    next.iteration = iteration + 1;
    next.metrics_history.push_back(metrics);
    return out;
  }

  // propose
  notify(pipeline, iteration, Stage::Propose);
  const fs::path proposal_rel = fs::path("traces") / iter_tag(iteration) / "proposal.json";
  const auto proposal = oracle::propose_constitutions(oracle_client, pipeline.prompts, negatives, iteration,
                                                      config.oracle_generation, config.proposal, proposal_rel.string());
  write_text_file_atomic(config.run_dir / proposal_rel,
                         json{{"raw_text", proposal.raw_text}, {"transcripts", proposal.transcripts}}.dump(2));
  metrics.constitutions_proposed = proposal.constitutions.size();
  auto registered = registry::register_constitutions(std::move(next.registry), proposal.constitutions);
  next.registry = std::move(registered.registry);
  metrics.constitutions_new_after_dedup = registered.new_count;

  std::vector<oracle::Constitution> active;
  if (config.reflection_scope == ReflectionScope::Registry) {
    active = next.registry.entries();
  } else {
    std::unordered_set<std::string> seen;
    for (const auto& c : proposal.constitutions) {
      if (seen.insert(c.id).second) active.push_back(c);
    }
  }

  // reflect + verify
  notify(pipeline, iteration, Stage::Reflect);
  auto trace_slots =
      gateway::map_bounded<reflection::RevisionTrace>(negatives.size(), config.max_in_flight, [&](std::size_t i) {
        auto trace = reflection::self_reflect(*base, pipeline.prompts, negatives[i], active,
                                              reflection::derive_order_seed(config.seed, negatives[i].record_id),
                                              config.generation, iteration);
        if (trace.steps.empty()) return trace;
        try {
          const auto verdict = reflection::verify_revision(oracle_client, pipeline.prompts, negatives[i].prompt,
                                                           trace.final_response, config.oracle_generation);
          trace.verified = verdict.label == oracle::Label::Positive ? reflection::VerifyStatus::Positive
                                                                    : reflection::VerifyStatus::Negative;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::AmbiguousVerdict) throw;
        }
        return trace;
      });
  std::vector<reflection::RevisionTrace> traces;
  for (auto& slot : trace_slots) {
    if (slot.error) throw *slot.error;
    if (slot.value->verified == reflection::VerifyStatus::Negative) ++metrics.post_reflection_negatives;
    if (!slot.value->steps.empty() && slot.value->verified == reflection::VerifyStatus::Skipped) {
      ++metrics.ambiguous_verdicts;
    }
    traces.push_back(std::move(*slot.value));
  }
  write_jsonl(trace_dir / "revisions.jsonl", traces);

  // emit
  notify(pipeline, iteration, Stage::Emit);
  const fs::path dataset = config.run_dir / "sft" / (iter_tag(iteration) + ".jsonl");
  metrics.sft_examples = sft::emit_sft_dataset(traces, dataset);

  // train
  if (metrics.sft_examples > 0) {
    notify(pipeline, iteration, Stage::Train);
    sft::TrainerInvocation invocation{dataset, config.hyperparams, state.current_model_ref,
                                      next_model_ref(state.current_model_ref)};
    const auto report = pipeline.trainer(invocation, config.run_dir / "sft" / (iter_tag(iteration) + ".manifest.json"));
    if (report.status != sft::TrainStatus::Succeeded || !report.output_model_ref) {
      throw Error(ErrorCode::TrainerReportedFailure,
                  "trainer returned status " + sft::to_string(report.status) + " for a non-empty dataset");
    }
    next.current_model_ref = *report.output_model_ref;
    metrics.trained = true;
  }

  metrics.model_ref = next.current_model_ref;
  next.iteration = iteration + 1;
  next.metrics_history.push_back(metrics);
  return out;
}

fs::path checkpoint_path(const fs::path& run_dir, int iteration) {
  char name[48];
  std::snprintf(name, sizeof name, "state-%04d.json", iteration);
  return checkpoints_dir(run_dir) / name;
}

void save_checkpoint(const IterationState& state, const fs::path& run_dir) {
  write_text_file_atomic(checkpoint_path(run_dir, state.iteration), json(state).dump(2));
}

namespace {

IterationState read_checkpoint(const fs::path& path) {
  try {
    return json::parse(read_text_file(path)).get<IterationState>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointCorrupt, path.string() + ": " + e.what());
  }
}

}  // namespace

std::optional<IterationState> load_checkpoint(const fs::path& run_dir, int iteration) {
  const auto path = checkpoint_path(run_dir, iteration);
  if (!fs::is_regular_file(path)) return std::nullopt;
  return read_checkpoint(path);
}

std::optional<IterationState> load_latest_checkpoint(const fs::path& run_dir) {
  const auto dir = checkpoints_dir(run_dir);
  if (!fs::is_directory(dir)) return std::nullopt;
  static const std::regex kName(R"(state-(\d+)\.json)");
  std::optional<std::pair<long, fs::path>> latest;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, kName)) continue;
    const long n = std::stol(m[1].str());
    if (!latest || n > latest->first) latest = {n, entry.path()};
  }
  if (!latest) return std::nullopt;
  return read_checkpoint(latest->second);
}

bool is_complete(const IterationState& state, const LoopConfig& config) {
  if (state.cursor.position >= state.corpus.record_count) return true;
  return config.max_iterations && state.iteration >= *config.max_iterations;
}

namespace {

void write_outputs(const IterationState& state, const RunReport& report, const fs::path& run_dir) {
  write_text_file_atomic(metrics_csv_path(run_dir), metrics_csv(state.metrics_history));
  registry::save_registry(state.registry, registry_path(run_dir));
  write_text_file_atomic(run_report_path(run_dir), json(report).dump(2) + "\n");
}

RunReport summarize(const IterationState& state, const LoopConfig& config, int iterations_run) {
  RunReport r;
  r.iterations_run = iterations_run;
  r.total_iterations = state.iteration;
  r.complete = is_complete(state, config);
  r.final_model_ref = state.current_model_ref;
  r.registry_size = state.registry.size();
  r.iterations_trained = static_cast<std::size_t>(std::count_if(
      state.metrics_history.begin(), state.metrics_history.end(), [](const auto& m) { return m.trained; }));
  return r;
}

}  // namespace

LoopResult run_loop(const Pipeline& pipeline, const LoopConfig& config, bool resume) {
  auto checkpoint = load_latest_checkpoint(config.run_dir);
  IterationState state;
  if (checkpoint) {
    if (!resume) {
      throw Error(ErrorCode::PreconditionFailed,
                  config.run_dir.string() + " already holds a checkpoint; resume it or choose another run_dir");
    }
    state = std::move(*checkpoint);
    const auto& d = pipeline.corpus->descriptor;
    if (state.corpus.record_count != d.record_count || state.corpus.format != d.format) {
      throw Error(ErrorCode::CheckpointCorrupt, "checkpoint corpus (" + std::to_string(state.corpus.record_count) +
                                                    " records) does not match the configured corpus");
    }
    if (state.cursor.batch_size != config.redteam_batch_size) {
      throw Error(ErrorCode::CheckpointCorrupt, "checkpoint batch size differs from redteam_batch_size");
    }
  } else {
    state = initial_state(pipeline, config);
    save_checkpoint(state, config.run_dir);
  }

  if (checkpoint && is_complete(state, config)) {
    auto report = summarize(state, config, 0);
    report.already_complete = true;
    write_outputs(state, report, config.run_dir);
    return {std::move(state), report};
  }

  // metrics.csv is rebuilt from the checkpoint so rows from an interrupted
  // iteration never survive a resume.
  write_text_file_atomic(metrics_csv_path(config.run_dir), metrics_csv(state.metrics_history));

  int ran = 0;
  while (!is_complete(state, config)) {
    auto outcome = run_iteration(state, pipeline, config);
    save_checkpoint(outcome.state, config.run_dir);
    {
      std::ofstream csv(metrics_csv_path(config.run_dir), std::ios::app);
      csv << metrics_csv_row(outcome.metrics) << "\n";
    }
    registry::save_registry(outcome.state.registry, registry_path(config.run_dir));
    spdlog::info("{}: {} negatives, {} new constitutions, trained={}, model={}", iter_tag(outcome.metrics.iteration),
                 outcome.metrics.negatives, outcome.metrics.constitutions_new_after_dedup, outcome.metrics.trained,
                 outcome.metrics.model_ref);
    state = std::move(outcome.state);
    ++ran;
  }

  auto report = summarize(state, config, ran);
  write_outputs(state, report, config.run_dir);
  return {std::move(state), report};
}

std::string metrics_csv_header() {
  return "iteration,batch_size,negatives,ambiguous_verdicts,constitutions_proposed,constitutions_new_after_dedup,"
         "sft_examples,trained,post_reflection_negatives,model_ref";
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_row(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

}  // namespace

std::string metrics_csv_row(const IterationMetrics& m) {
  std::ostringstream out;
  out << m.iteration << ',' << m.batch_size << ',' << m.negatives << ',' << m.ambiguous_verdicts << ','
      << m.constitutions_proposed << ',' << m.constitutions_new_after_dedup << ',' << m.sft_examples << ','
      << (m.trained ? "true" : "false") << ',' << m.post_reflection_negatives << ',' << csv_field(m.model_ref);
  return out.str();
}

std::string metrics_csv(std::span<const IterationMetrics> history) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto& m : history) out += metrics_csv_row(m) + "\n";
  return out;
}

std::vector<IterationMetrics> parse_metrics_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines.front() != metrics_csv_header()) {
    throw Error(ErrorCode::FormatMismatch, "metrics.csv header mismatch");
  }
  std::vector<IterationMetrics> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_csv_row(lines[i]);
    if (f.size() != 10) throw Error(ErrorCode::FormatMismatch, "metrics.csv row " + std::to_string(i) + " malformed");
    IterationMetrics m;
    m.iteration = std::stoi(f[0]);
    m.batch_size = std::stoul(f[1]);
    m.negatives = std::stoul(f[2]);
    m.ambiguous_verdicts = std::stoul(f[3]);
    m.constitutions_proposed = std::stoul(f[4]);
    m.constitutions_new_after_dedup = std::stoul(f[5]);
    m.sft_examples = std::stoul(f[6]);
    m.trained = f[7] == "true";
    m.post_reflection_negatives = std::stoul(f[8]);
    m.model_ref = f[9];
    out.push_back(std::move(m));
  }
  return out;
}

void to_json(json& j, const IterationMetrics& m) {
  j = json{{"iteration", m.iteration},
           {"batch_size", m.batch_size},
           {"negatives", m.negatives},
           {"ambiguous_verdicts", m.ambiguous_verdicts},
           {"constitutions_proposed", m.constitutions_proposed},
           {"constitutions_new_after_dedup", m.constitutions_new_after_dedup},
           {"sft_examples", m.sft_examples},
           {"trained", m.trained},
           {"post_reflection_negatives", m.post_reflection_negatives},
           {"model_ref", m.model_ref}};
}

void from_json(const json& j, IterationMetrics& m) {
  j.at("iteration").get_to(m.iteration);
  j.at("batch_size").get_to(m.batch_size);
  j.at("negatives").get_to(m.negatives);
  j.at("ambiguous_verdicts").get_to(m.ambiguous_verdicts);
  j.at("constitutions_proposed").get_to(m.constitutions_proposed);
  j.at("constitutions_new_after_dedup").get_to(m.constitutions_new_after_dedup);
  j.at("sft_examples").get_to(m.sft_examples);
  j.at("trained").get_to(m.trained);
  j.at("post_reflection_negatives").get_to(m.post_reflection_negatives);
  j.at("model_ref").get_to(m.model_ref);
}

void to_json(json& j, const IterationState& s) {
  j = json{{"version", 1},
           {"iteration", s.iteration},
           {"corpus", s.corpus},
           {"cursor", s.cursor},
           {"current_model_ref", s.current_model_ref},
           {"registry", registry::export_registry(s.registry)},
           {"metrics_history", s.metrics_history}};
}

void from_json(const json& j, IterationState& s) {
  j.at("iteration").get_to(s.iteration);
  j.at("corpus").get_to(s.corpus);
  j.at("cursor").get_to(s.cursor);
  j.at("current_model_ref").get_to(s.current_model_ref);
  s.registry = registry::import_registry(j.at("registry"));
  j.at("metrics_history").get_to(s.metrics_history);
}

void to_json(json& j, const RunReport& r) {
  j = json{{"iterations_run", r.iterations_run},
           {"total_iterations", r.total_iterations},
           {"complete", r.complete},
           {"already_complete", r.already_complete},
           {"final_model_ref", r.final_model_ref},
           {"registry_size", r.registry_size},
           {"iterations_trained", r.iterations_trained}};
}

}  // namespace constalign::controller
