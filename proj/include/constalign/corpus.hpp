#pragma once

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace constalign::corpus {

struct RedTeamRecord {
  std::string id;
  std::string question;
  std::optional<std::string> context;
  std::optional<std::string> topic;

  bool operator==(const RedTeamRecord&) const = default;
};

enum class DatasetFormat { TranscriptStyle, HarmfulQa, DangerousQa, GenericJsonl };

std::string to_string(DatasetFormat format);
DatasetFormat parse_format(std::string_view name);

struct DatasetDescriptor {
  DatasetFormat format = DatasetFormat::GenericJsonl;
  std::filesystem::path path;
  std::size_t record_count = 0;

  bool operator==(const DatasetDescriptor&) const = default;
};

struct LoadWarning {
  std::size_t line = 0;  // 1-based line (jsonl) or element index + 1 (json array)
  std::string reason;
};

/// A loaded corpus. Immutable after load_dataset returns.
struct Corpus {
  DatasetDescriptor descriptor;
  std::vector<RedTeamRecord> records;
  std::vector<LoadWarning> warnings;
};

struct LoadOptions {
  bool strict = false;
};

/// Loads and normalizes one of the supported corpus formats.
///
/// Lenient mode skips malformed entries but records each one in
/// Corpus::warnings; strict mode fails on the first malformed entry with
/// FormatMismatch. An empty (or whitespace-only) file is EmptyCorpus; a
/// non-empty file with no valid records is FormatMismatch.
Corpus load_dataset(const std::filesystem::path& path, DatasetFormat format,
                    const LoadOptions& options = {});

struct BatchCursor {
  std::size_t batch_size = 1;
  std::size_t position = 0;

  bool operator==(const BatchCursor&) const = default;
};

BatchCursor make_cursor(std::size_t batch_size);

bool exhausted(const Corpus& corpus, const BatchCursor& cursor);

/// Returns up to batch_size records in corpus order and advances the cursor.
/// An empty result means the corpus is exhausted.
std::vector<RedTeamRecord> next_batch(const Corpus& corpus, BatchCursor& cursor);

/// Splits an hh-rlhf style transcript ("\n\nHuman: ...\n\nAssistant: ...")
/// into its final human utterance and the preceding turns.
struct TranscriptSplit {
  std::string question;
  std::optional<std::string> context;
};
std::optional<TranscriptSplit> split_transcript(std::string_view transcript);

void to_json(nlohmann::json& j, const RedTeamRecord& r);
void from_json(const nlohmann::json& j, RedTeamRecord& r);
void to_json(nlohmann::json& j, const DatasetDescriptor& d);
void from_json(const nlohmann::json& j, DatasetDescriptor& d);
void to_json(nlohmann::json& j, const BatchCursor& c);
void from_json(const nlohmann::json& j, BatchCursor& c);

}  // namespace constalign::corpus
