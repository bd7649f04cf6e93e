#include "constalign/cli.hpp"

#include "constalign/config.hpp"
#include "constalign/controller.hpp"
#include "constalign/error.hpp"
#include "constalign/eval.hpp"
#include "constalign/registry.hpp"
#include "constalign/util.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <ostream>
#include <regex>

namespace constalign::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

int report_error(std::ostream& err, const Error& e, int code) {
  err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
  if (!e.detail().empty()) err << "  " << e.detail() << "\n";
  return code;
}

int setup_exit_code(const Error& e) {
  return e.code() == ErrorCode::EndpointUnreachable ? kExitRuntime : kExitUsage;
}

std::string iter_suffix(int iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-iter-%04d", iteration);
  return buf;
}

fs::path resolve_run_dir(const RunDirOptions& o) {
  if (o.run_dir) return *o.run_dir;
  if (o.config_path) return config::load_run_config(*o.config_path).loop.run_dir;
  throw Error(ErrorCode::ConfigInvalid, "one of --run-dir or --config is required");
}

void print_plan(const config::RunConfig& c, const controller::Pipeline& p, bool resume, std::ostream& out) {
  const auto& loop = c.loop;
  const std::size_t records = p.corpus->records.size();
  const std::size_t batches = (records + loop.redteam_batch_size - 1) / loop.redteam_batch_size;
  std::size_t planned = batches;
  if (loop.max_iterations) planned = std::min<std::size_t>(planned, static_cast<std::size_t>(*loop.max_iterations));

  out << "dry run: config valid, nothing will be written\n";
  out << "run_dir      " << loop.run_dir.string() << "\n";
  out << "corpus       " << corpus::to_string(c.corpus_format) << " " << c.corpus_path.string() << " (" << records
      << " records, " << p.corpus->warnings.size() << " skipped)\n";
  out << "base         " << gateway::to_string(c.base.role_tag) << " " << c.base.model_name << "\n";
  out << "oracle       " << gateway::to_string(c.oracle.role_tag) << " " << c.oracle.model_name << "\n";
  out << "template     " << p.attack_template.name << "\n";
  out << "reflection   " << controller::to_string(loop.reflection_scope) << " scope\n";
  out << "trainer      " << c.trainer.argv.front() << "\n";

  int start = 0;
  if (const auto ckpt = controller::load_latest_checkpoint(loop.run_dir)) {
    start = ckpt->iteration;
    out << "checkpoint   iteration " << start << (resume ? " (will resume)" : " (align needs --resume)") << "\n";
  }
  out << "iterations   " << (planned > static_cast<std::size_t>(start) ? planned - start : 0) << " planned of "
      << planned << " (batch size " << loop.redteam_batch_size << ")\n";
  out << "stages per iteration:\n";
  out << "  1 red-team   " << loop.redteam_batch_size << " prompts to base, max " << loop.max_in_flight
      << " in flight\n";
  out << "  2 evaluate   oracle verdict per response\n";
  out << "  3 propose    only if a verdict is negative; <= " << loop.proposal.max_negatives_per_call
      << " failures per oracle call\n";
  out << "  4 reflect    one critique/revise step per constitution, then oracle verification\n";
  out << "  5 emit       sft/iter-NNNN.jsonl from verified revisions\n";
  out << "  6 train      external trainer on a non-empty dataset; base reference advances\n";
}

std::vector<std::string> load_plain_questions(const fs::path& path) {
  std::vector<std::string> out;
  int line_no = 0;
  for (const auto& line : split_lines(read_text_file(path))) {
    ++line_no;
    if (trim(line).empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("question") || !j.at("question").is_string()) {
      throw Error(ErrorCode::FormatMismatch, path.string() + ":" + std::to_string(line_no) + ": expected {\"question\": ...}");
    }
    out.push_back(j.at("question").get<std::string>());
  }
  if (out.empty()) throw Error(ErrorCode::EmptyEvalSet, path.string() + " holds no questions");
  return out;
}

std::string pick_model_ref(const EvalOptions& o, const config::RunConfig& c) {
  if (o.model_ref) return *o.model_ref;
  if (o.iteration) {
    const auto state = controller::load_checkpoint(c.loop.run_dir, *o.iteration);
    if (!state) {
      throw Error(ErrorCode::PreconditionFailed,
                  "no checkpoint for iteration " + std::to_string(*o.iteration) + " in " + c.loop.run_dir.string());
    }
    return state->current_model_ref;
  }
  if (const auto latest = controller::load_latest_checkpoint(c.loop.run_dir)) return latest->current_model_ref;
  return c.base.model_name;
}

}  // namespace

int cmd_align(const AlignOptions& o, std::ostream& out, std::ostream& err) {
  config::RunConfig c;
  controller::Pipeline pipeline;
  try {
    c = config::load_run_config(o.config_path);
    if (o.run_dir) c.loop.run_dir = *o.run_dir;
    if (o.max_iterations) c.loop.max_iterations = *o.max_iterations;
    if (o.seed) c.loop.seed = *o.seed;
    pipeline = config::make_pipeline(c);
  } catch (const Error& e) {
    return report_error(err, e, setup_exit_code(e));
  }

  if (o.dry_run) {
    print_plan(c, pipeline, o.resume, out);
    return kExitOk;
  }

  pipeline.on_stage = [](int iteration, controller::Stage stage) {
    spdlog::debug("iteration {}: {}", iteration, controller::to_string(stage));
  };
  try {
    const auto result = controller::run_loop(pipeline, c.loop, o.resume);
    const auto& r = result.report;
    if (r.already_complete) {
      out << "already complete: " << r.total_iterations << " iterations in " << c.loop.run_dir.string()
          << ", model " << r.final_model_ref << "\n";
      return kExitOk;
    }
    out << "ran " << r.iterations_run << " iterations (" << r.total_iterations << " total), trained "
        << r.iterations_trained << ", registry " << r.registry_size << " constitutions, model " << r.final_model_ref
        << "\n";
    out << "run_dir " << c.loop.run_dir.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    return report_error(err, e, e.code() == ErrorCode::PreconditionFailed ? kExitUsage : kExitRuntime);
  }
}

int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  if (o.benchmark != "mc1" && o.benchmark != "hhh" && o.benchmark != "truthfulqa-gen") {
    err << "error: unknown benchmark '" << o.benchmark << "' (expected mc1, hhh or truthfulqa-gen)\n";
    return kExitUsage;
  }
  config::RunConfig c;
  std::shared_ptr<gateway::ModelClient> base;
  PromptSet prompts;
  std::string model_ref;
  try {
    c = config::load_run_config(o.config_path);
    if (o.run_dir) c.loop.run_dir = *o.run_dir;
    if (!fs::is_regular_file(o.data_path)) {
      throw Error(ErrorCode::FileNotFound, "benchmark file " + o.data_path.string() + " not found");
    }
    if (o.benchmark == "truthfulqa-gen" && !c.judge) throw Error(ErrorCode::ConfigInvalid, "endpoints.judge: required for truthfulqa-gen");
    prompts = PromptSet::load(c.prompts_dir);
    model_ref = pick_model_ref(o, c);
    base = gateway::make_client(c.base, gateway::Slot::Base, c.retry)->with_model(model_ref);
  } catch (const Error& e) {
    return report_error(err, e, setup_exit_code(e));
  }

  const fs::path eval_dir = c.loop.run_dir / "eval";
  const std::string suffix = o.iteration ? iter_suffix(*o.iteration) : std::string();
  try {
    if (o.benchmark == "truthfulqa-gen") {
      const auto questions = load_plain_questions(o.data_path);
      const auto judge = gateway::make_client(*c.judge, gateway::Slot::Judge, c.retry);
      const auto result =
          eval::judge_generation(*judge, *base, prompts, questions, c.loop.generation, c.loop.max_in_flight);
      json j = result;
      j["benchmark"] = "truthfulqa-gen";
      j["model_ref"] = model_ref;
      const fs::path report = eval_dir / ("truthfulqa-gen" + suffix + ".json");
      write_text_file_atomic(report, j.dump(2) + "\n");
      char line[64];
      std::snprintf(line, sizeof line, "%.4f", result.fraction_truthful);
      write_text_file_atomic(eval_dir / ("truthfulqa-gen" + suffix + ".csv"), std::string("% True\n") + line + "\n");
      out << "truthfulqa-gen  model " << model_ref << "  % True " << line << "  (" << result.n_truthful << "/"
          << result.n_judged << ", " << result.errors << " errors)\n";
      out << "report " << report.string() << "\n";
      return kExitOk;
    }

    eval::EvalReport report;
    if (o.benchmark == "mc1") {
      const auto questions = eval::load_mc_questions(o.data_path);
      report = eval::score_mc1(*base, prompts, questions, c.loop.max_in_flight);
    } else {
      const auto items = eval::load_hhh_items(o.data_path);
      report = eval::score_hhh(*base, prompts, items, c.loop.max_in_flight);
    }
    const fs::path report_path = eval_dir / (report.benchmark + suffix + ".json");
    write_text_file_atomic(report_path, json(report).dump(2) + "\n");
    if (o.benchmark == "hhh") {
      write_text_file_atomic(eval_dir / (report.benchmark + suffix + ".csv"), eval::hhh_table_csv(report));
      out << "bigbench-hhh  model " << model_ref << "\n" << eval::format_hhh_table(report);
    } else {
      char line[64];
      std::snprintf(line, sizeof line, "%.4f", report.overall);
      write_text_file_atomic(eval_dir / (report.benchmark + suffix + ".csv"), std::string("MC1\n") + line + "\n");
      out << "truthfulqa-mc1  model " << model_ref << "  MC1 " << line << "  (" << report.n_correct << "/"
          << report.n_items << ", " << report.ties << " ties)\n";
    }
    out << "report " << report_path.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    return report_error(err, e, kExitRuntime);
  }
}

int cmd_registry(const RunDirOptions& o, const std::string& action, std::ostream& out, std::ostream& err) {
  if (action != "export" && action != "show") {
    err << "error: unknown registry action '" << action << "' (expected export or show)\n";
    return kExitUsage;
  }
  fs::path run_dir;
  try {
    run_dir = resolve_run_dir(o);
  } catch (const Error& e) {
    return report_error(err, e, kExitUsage);
  }
  try {
    const auto reg = registry::load_registry(controller::registry_path(run_dir));
    if (action == "show") {
      out << registry::format_registry(reg);
    } else if (o.out) {
      write_text_file_atomic(*o.out, registry::export_registry(reg).dump(2) + "\n");
      out << "exported " << reg.size() << " constitutions to " << o.out->string() << "\n";
    } else {
      out << registry::export_registry(reg).dump(2) << "\n";
    }
    return kExitOk;
  } catch (const Error& e) {
    return report_error(err, e, kExitRuntime);
  }
}

int cmd_report(const RunDirOptions& o, std::ostream& out, std::ostream& err) {
  fs::path run_dir;
  try {
    run_dir = resolve_run_dir(o);
  } catch (const Error& e) {
    return report_error(err, e, kExitUsage);
  }
  try {
    const auto history = controller::parse_metrics_csv(read_text_file(controller::metrics_csv_path(run_dir)));

    std::vector<eval::EvalSnapshot> snapshots;
    const fs::path eval_dir = run_dir / "eval";
    if (fs::is_directory(eval_dir)) {
      static const std::regex kName(R"(bigbench-hhh-iter-(\d+)\.json)");
      for (const auto& entry : fs::directory_iterator(eval_dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (!std::regex_match(name, m, kName)) continue;
        eval::EvalReport r;
        try {
          r = json::parse(read_text_file(entry.path())).get<eval::EvalReport>();
        } catch (const json::exception& e) {
          throw Error(ErrorCode::FormatMismatch, entry.path().string() + ": " + e.what());
        }
        snapshots.push_back(eval::snapshot_from_report(std::stoi(m[1].str()), r));
      }
    }
    std::sort(snapshots.begin(), snapshots.end(),
              [](const auto& a, const auto& b) { return a.iteration < b.iteration; });

    const fs::path out_dir = o.out ? *o.out : run_dir / "report";
    const auto files = eval::emit_iteration_curves(history, snapshots, out_dir);

    std::size_t negatives = 0;
    std::size_t trained = 0;
    for (const auto& m : history) {
      negatives += m.negatives;
      trained += m.trained ? 1 : 0;
    }
    out << "iterations " << history.size() << ", trained " << trained << ", negatives " << negatives << "\n";
    if (!history.empty()) out << "final model " << history.back().model_ref << "\n";
    out << "hhh snapshots " << snapshots.size() << "\n";
    out << "curves " << files.csv.string() << "\n";
    out << "plot " << files.svg.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    return report_error(err, e, kExitRuntime);
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"constalign: iterative constitution discovery and self-alignment"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  AlignOptions align;
  auto* align_cmd = app.add_subcommand("align", "Run (or resume) the alignment loop");
  align_cmd->add_option("-c,--config", align.config_path, "Run config (JSON)")->required();
  align_cmd->add_flag("--resume", align.resume, "Continue from the latest checkpoint in run_dir");
  align_cmd->add_flag("--dry-run", align.dry_run, "Validate the config and print the stage plan");
  align_cmd->add_option("--run-dir", align.run_dir, "Override run_dir");
  align_cmd->add_option("--max-iterations", align.max_iterations, "Override max_iterations")
      ->check(CLI::NonNegativeNumber);
  align_cmd->add_option("--seed", align.seed, "Override the run seed");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a model on a benchmark file");
  eval_cmd->add_option("-c,--config", ev.config_path, "Run config (JSON)")->required();
  eval_cmd->add_option("-b,--benchmark", ev.benchmark, "mc1, hhh or truthfulqa-gen")->required();
  eval_cmd->add_option("-d,--data", ev.data_path, "Benchmark items (JSON lines)")->required();
  eval_cmd->add_option("--model-ref", ev.model_ref, "Model reference to score (default: latest checkpoint)");
  eval_cmd->add_option("--iteration", ev.iteration, "Score the model in effect after this many iterations")
      ->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--run-dir", ev.run_dir, "Override run_dir");

  RunDirOptions reg_opts;
  std::string reg_action;
  auto* reg_cmd = app.add_subcommand("registry", "Show or export the constitution registry");
  reg_cmd->add_option("action", reg_action, "export or show")->required();
  reg_cmd->add_option("-c,--config", reg_opts.config_path, "Run config (JSON)");
  reg_cmd->add_option("--run-dir", reg_opts.run_dir, "Run directory");
  reg_cmd->add_option("-o,--out", reg_opts.out, "Export destination (default stdout)");

  RunDirOptions rep_opts;
  auto* rep_cmd = app.add_subcommand("report", "Summarize a run and draw HHH curves");
  rep_cmd->add_option("-c,--config", rep_opts.config_path, "Run config (JSON)");
  rep_cmd->add_option("--run-dir", rep_opts.run_dir, "Run directory");
  rep_cmd->add_option("-o,--out", rep_opts.out, "Output directory (default run_dir/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  if (!spdlog::get("constalign")) spdlog::set_default_logger(spdlog::stderr_color_mt("constalign"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  if (*align_cmd) return cmd_align(align, out, err);
  if (*eval_cmd) return cmd_eval(ev, out, err);
  if (*reg_cmd) return cmd_registry(reg_opts, reg_action, out, err);
  return cmd_report(rep_opts, out, err);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("constalign");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace constalign::cli
