#pragma once

#include "constalign/controller.hpp"
#include "constalign/gateway.hpp"
#include "constalign/prompts.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace constalign::eval {

struct McQuestion {
  std::string id;
  std::string question;
  std::vector<std::string> choices;
  int correct_index = 0;
  std::string category = "all";
};

enum class HhhCategory { Harmless, Helpful, Honest, Other };

std::string to_string(HhhCategory c);
HhhCategory parse_hhh_category(std::string_view name);
inline constexpr HhhCategory kHhhCategories[] = {HhhCategory::Harmless, HhhCategory::Helpful, HhhCategory::Honest,
                                                 HhhCategory::Other};

struct HhhComparison {
  std::string id;
  std::string question;
  std::string answer_a;
  std::string answer_b;
  char preferred = 'a';  // 'a' or 'b'
  HhhCategory category = HhhCategory::Other;
};

std::vector<McQuestion> load_mc_questions(const std::filesystem::path& path);
std::vector<HhhComparison> load_hhh_items(const std::filesystem::path& path);

enum class ScoringMode { Logprob, Fallback };

/// Per-item score log: enough to recompute the report.
struct ItemLog {
  std::string id;
  std::string category;
  std::vector<double> scores;  // per choice (MC1) or per answer (HHH)
  int pick = 0;
  int correct_index = 0;
  bool tie = false;

  bool operator==(const ItemLog&) const = default;
};

struct EvalReport {
  std::string benchmark;
  std::string model_ref;
  std::map<std::string, double> per_category_accuracy;
  std::map<std::string, std::size_t> per_category_counts;
  double overall = 0.0;
  std::size_t n_items = 0;
  std::size_t n_correct = 0;
  std::size_t ties = 0;
  ScoringMode scoring_mode = ScoringMode::Logprob;
  std::string normalization;  // how raw log-likelihoods were compared
  std::vector<ItemLog> items;

  bool operator==(const EvalReport&) const = default;
};

/// Rebuilds the aggregate fields of a report from its per-item logs.
EvalReport recompute_report(std::string benchmark, std::string model_ref, std::vector<ItemLog> items,
                            ScoringMode mode, std::string normalization);

/// Index of the highest score, lowest index on ties.
int argmax_lowest(std::span<const double> scores, bool* tie = nullptr);

std::string render_mc1_prompt(const PromptSet& prompts, std::string_view question, std::string_view choice);
std::string render_hhh_prompt(const PromptSet& prompts, std::string_view question);

/// TruthfulQA MC1: every choice is scored independently as
/// logp("True") - logp("False") under the True/False template; the pick is
/// the highest-scoring choice.
EvalReport score_mc1(const gateway::ModelClient& model, const PromptSet& prompts, std::span<const McQuestion> questions,
                     std::size_t max_in_flight = 4);

/// HHH pairwise preference: mean per-token log-likelihood of each answer as
/// a continuation of the question; ties go to answer_a and are flagged.
EvalReport score_hhh(const gateway::ModelClient& model, const PromptSet& prompts,
                     std::span<const HhhComparison> items, std::size_t max_in_flight = 4);

struct JudgeTranscript {
  std::string question;
  std::string answer;
  std::string judge_reply;
  std::optional<bool> truthful;
  std::optional<std::string> error;
};

struct JudgeResult {
  double fraction_truthful = 0.0;
  std::size_t n_truthful = 0;
  std::size_t n_judged = 0;
  std::size_t errors = 0;
  std::vector<JudgeTranscript> transcripts;
};

/// "untruthful" / "not truthful" -> false, "truthful" -> true, else nullopt.
std::optional<bool> parse_truthful(std::string_view reply);

/// Generates an answer per prompt with `model` and has `judge` grade it.
/// Items whose generation or grading fails (including unparseable grades)
/// are excluded from the denominator and counted in `errors`.
JudgeResult judge_generation(const gateway::ModelClient& judge, const gateway::ModelClient& model,
                             const PromptSet& prompts, std::span<const std::string> questions,
                             const gateway::GenerationParams& params, std::size_t max_in_flight = 4);

/// Category scores of one HHH evaluation at a given loop iteration.
struct EvalSnapshot {
  int iteration = 0;
  double harmless = 0.0;
  double helpful = 0.0;
  double honest = 0.0;
  double other = 0.0;
  double overall = 0.0;

  bool operator==(const EvalSnapshot&) const = default;
};

EvalSnapshot snapshot_from_report(int iteration, const EvalReport& report);

struct CurveFiles {
  std::filesystem::path csv;
  std::filesystem::path svg;
};

/// Writes hhh_curves.csv (iteration + the five score columns) and
/// hhh_curves.svg; iterations that trained are marked on the plot.
CurveFiles emit_iteration_curves(std::span<const controller::IterationMetrics> metrics_history,
                                 std::span<const EvalSnapshot> snapshots, const std::filesystem::path& out_dir);

std::vector<EvalSnapshot> parse_curves_csv(std::string_view text);

/// Harmless,Helpful,Honest,Other,Overall header plus one row.
std::string hhh_table_csv(const EvalReport& report);
/// Aligned plain-text table with the same columns.
std::string format_hhh_table(const EvalReport& report);

void to_json(nlohmann::json& j, const ItemLog& l);
void from_json(const nlohmann::json& j, ItemLog& l);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);
void to_json(nlohmann::json& j, const JudgeTranscript& t);
void to_json(nlohmann::json& j, const JudgeResult& r);

}  // namespace constalign::eval
