#include "constalign/prompts.hpp"

#include "constalign/error.hpp"
#include "constalign/util.hpp"

namespace constalign {

namespace {

std::string load_required(const std::filesystem::path& dir, const char* name) {
  const auto path = dir / name;
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::FileNotFound, "prompt fixture " + path.string());
  }
  return read_text_file(path);
}

void require_slot(const std::string& text, std::string_view slot, const char* name) {
  if (text.find(slot) == std::string::npos) {
    throw Error(ErrorCode::ConfigInvalid, std::string(name) + " lacks slot " + std::string(slot));
  }
}

}  // namespace

PromptSet PromptSet::load(const std::filesystem::path& dir) {
  PromptSet p;
  p.oracle_eval = load_required(dir, "oracle_eval.txt");
  p.constitution_proposal = load_required(dir, "constitution_proposal.txt");
  p.reflection = load_required(dir, "reflection.txt");
  p.judge = load_required(dir, "judge.txt");
  p.mc1_template = load_required(dir, "mc1_template.txt");
  p.hhh_template = load_required(dir, "hhh_template.txt");
  require_slot(p.reflection, kConstitutionSlot, "reflection.txt");
  require_slot(p.mc1_template, "{question}", "mc1_template.txt");
  require_slot(p.mc1_template, "{choice}", "mc1_template.txt");
  require_slot(p.hhh_template, "{question}", "hhh_template.txt");
  return p;
}

std::filesystem::path PromptSet::default_dir() { return CONSTALIGN_PROMPTS_DIR; }

}  // namespace constalign
