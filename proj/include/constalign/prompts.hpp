#pragma once

#include <filesystem>
#include <string>

namespace constalign {

/// The prompt fixtures, loaded verbatim from a directory (see prompts/README.md).
struct PromptSet {
  std::string oracle_eval;
  std::string constitution_proposal;
  std::string reflection;    // contains {{CONSTITUTION}}
  std::string judge;
  std::string mc1_template;  // contains {question} and {choice}
  std::string hhh_template;  // contains {question}

  static PromptSet load(const std::filesystem::path& dir);
  /// Directory shipped with the sources.
  static std::filesystem::path default_dir();
};

inline constexpr const char* kConstitutionSlot = "{{CONSTITUTION}}";

}  // namespace constalign
