#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace constalign::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

struct AlignOptions {
  std::filesystem::path config_path;
  bool resume = false;
  bool dry_run = false;
  std::optional<std::filesystem::path> run_dir;
  std::optional<int> max_iterations;
  std::optional<std::uint64_t> seed;
};

struct EvalOptions {
  std::filesystem::path config_path;
  std::string benchmark;  // mc1 | hhh | truthfulqa-gen
  std::filesystem::path data_path;
  std::optional<std::string> model_ref;
  std::optional<int> iteration;
  std::optional<std::filesystem::path> run_dir;
};

struct RunDirOptions {
  std::optional<std::filesystem::path> config_path;
  std::optional<std::filesystem::path> run_dir;
  std::optional<std::filesystem::path> out;
};

int cmd_align(const AlignOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);
int cmd_registry(const RunDirOptions& options, const std::string& action, std::ostream& out, std::ostream& err);
int cmd_report(const RunDirOptions& options, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches to a subcommand.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace constalign::cli
