#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace constalign {

enum class ErrorCode {
  // corpus
  FileNotFound,
  FormatMismatch,
  EmptyCorpus,
  IoError,
  // gateway
  EndpointUnreachable,
  AuthFailure,
  ContentRefused,
  EndpointRejected,
  ScoringUnsupported,
  MockScriptInvalid,
  // redteam
  TemplateSlotMissing,
  // oracle
  AmbiguousVerdict,
  NoConstitutionsParsed,
  ContextOverflow,
  // reflection
  ReflectionAborted,
  // sft bridge
  InvalidLogprob,
  TrainerLaunchFailure,
  TrainerReportedFailure,
  ReportParseError,
  // eval
  EmptyEvalSet,
  // controller / cli
  MissingRegistry,
  CheckpointCorrupt,
  ConfigInvalid,
  PreconditionFailed,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable code. `detail` holds auxiliary
/// payload: the refusal text for ContentRefused, captured stderr for
/// TrainerReportedFailure, the raw reply for AmbiguousVerdict.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace constalign
