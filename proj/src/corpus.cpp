#include "constalign/corpus.hpp"

#include "constalign/error.hpp"
#include "constalign/util.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <unordered_set>

namespace constalign::corpus {

using json = nlohmann::json;

std::string to_string(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::TranscriptStyle: return "transcript-style";
    case DatasetFormat::HarmfulQa: return "harmful-qa";
    case DatasetFormat::DangerousQa: return "dangerous-qa";
    case DatasetFormat::GenericJsonl: return "generic-jsonl";
  }
  return "generic-jsonl";
}

DatasetFormat parse_format(std::string_view name) {
  if (name == "transcript-style") return DatasetFormat::TranscriptStyle;
  if (name == "harmful-qa") return DatasetFormat::HarmfulQa;
  if (name == "dangerous-qa") return DatasetFormat::DangerousQa;
  if (name == "generic-jsonl") return DatasetFormat::GenericJsonl;
  throw Error(ErrorCode::ConfigInvalid, "unknown corpus format '" + std::string(name) + "'");
}

std::optional<TranscriptSplit> split_transcript(std::string_view transcript) {
  static constexpr std::string_view kHuman = "Human:";
  static constexpr std::string_view kAssistant = "Assistant:";

  // Markers only count at the start of the text or after a newline.
  auto marker_at = [&](std::size_t pos, std::string_view marker) {
    return transcript.substr(pos, marker.size()) == marker &&
           (pos == 0 || transcript[pos - 1] == '\n');
  };

  std::size_t last_human = std::string_view::npos;
  for (std::size_t pos = transcript.find(kHuman); pos != std::string_view::npos;
       pos = transcript.find(kHuman, pos + 1)) {
    if (marker_at(pos, kHuman)) last_human = pos;
  }
  if (last_human == std::string_view::npos) return std::nullopt;

  std::size_t body_start = last_human + kHuman.size();
  std::size_t body_end = transcript.size();
  for (std::size_t pos = transcript.find(kAssistant, body_start); pos != std::string_view::npos;
       pos = transcript.find(kAssistant, pos + 1)) {
    if (marker_at(pos, kAssistant)) {
      body_end = pos;
      break;
    }
  }

  TranscriptSplit split;
  split.question = std::string(trim(transcript.substr(body_start, body_end - body_start)));
  if (split.question.empty()) return std::nullopt;
  auto ctx = trim(transcript.substr(0, last_human));
  if (!ctx.empty()) split.context = std::string(ctx);
  return split;
}

namespace {

std::optional<std::string> optional_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw std::invalid_argument(std::string("field '") + key + "' is not a string");
  return it->get<std::string>();
}

std::optional<std::string> id_field(const json& obj) {
  auto it = obj.find("id");
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw std::invalid_argument("field 'id' is neither string nor integer");
}

// Each adapter maps one raw entry to a record, or throws std::invalid_argument
// describing why the entry is malformed.
RedTeamRecord adapt_generic(const json& entry, std::size_t) {
  if (!entry.is_object()) throw std::invalid_argument("entry is not an object");
  RedTeamRecord r;
  auto id = id_field(entry);
  if (!id || id->empty()) throw std::invalid_argument("missing 'id'");
  r.id = *id;
  auto q = optional_string(entry, "question");
  if (!q || trim(*q).empty()) throw std::invalid_argument("missing or empty 'question'");
  r.question = *q;
  r.context = optional_string(entry, "context");
  r.topic = optional_string(entry, "topic");
  return r;
}

RedTeamRecord adapt_transcript(const json& entry, std::size_t ordinal) {
  if (!entry.is_object()) throw std::invalid_argument("entry is not an object");
  auto transcript = optional_string(entry, "transcript");
  if (!transcript) transcript = optional_string(entry, "chosen");
  if (!transcript) throw std::invalid_argument("missing 'transcript'");
  auto split = split_transcript(*transcript);
  if (!split) throw std::invalid_argument("transcript has no human turn");
  RedTeamRecord r;
  auto id = id_field(entry);
  r.id = id ? *id : "hh-" + std::to_string(ordinal);
  r.question = std::move(split->question);
  r.context = std::move(split->context);
  if (auto tags = entry.find("tags"); tags != entry.end() && tags->is_array() && !tags->empty() &&
                                      tags->front().is_string()) {
    r.topic = tags->front().get<std::string>();
  } else {
    r.topic = optional_string(entry, "topic");
  }
  return r;
}

RedTeamRecord adapt_harmful_qa(const json& entry, std::size_t ordinal) {
  if (!entry.is_object()) throw std::invalid_argument("entry is not an object");
  auto q = optional_string(entry, "question");
  if (!q || trim(*q).empty()) throw std::invalid_argument("missing or empty 'question'");
  RedTeamRecord r;
  auto id = id_field(entry);
  r.id = "harmfulqa-" + (id ? *id : std::to_string(ordinal));
  r.question = *q;
  r.topic = optional_string(entry, "topic");
  return r;
}

RedTeamRecord adapt_dangerous_qa(const json& entry, std::size_t ordinal) {
  RedTeamRecord r;
  r.id = "dangerousqa-" + std::to_string(ordinal);
  if (entry.is_string()) {
    r.question = entry.get<std::string>();
  } else if (entry.is_object()) {
    auto q = optional_string(entry, "question");
    if (!q) throw std::invalid_argument("missing 'question'");
    r.question = *q;
  } else {
    throw std::invalid_argument("entry is neither a string nor an object");
  }
  if (trim(r.question).empty()) throw std::invalid_argument("empty question");
  return r;
}

using Adapter = RedTeamRecord (*)(const json&, std::size_t);

Adapter adapter_for(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::TranscriptStyle: return adapt_transcript;
    case DatasetFormat::HarmfulQa: return adapt_harmful_qa;
    case DatasetFormat::DangerousQa: return adapt_dangerous_qa;
    case DatasetFormat::GenericJsonl: return adapt_generic;
  }
  return adapt_generic;
}

}  // namespace

Corpus load_dataset(const std::filesystem::path& path, DatasetFormat format,
                    const LoadOptions& options) {
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::FileNotFound, path.string());
  }
  const std::string text = read_text_file(path);
  if (trim(text).empty()) {
    throw Error(ErrorCode::EmptyCorpus, path.string() + " contains no records");
  }

  // (line number, entry) pairs; parse failures are recorded as null entries.
  struct RawEntry {
    std::size_t line;
    std::optional<json> value;
    std::string parse_error;
  };
  std::vector<RawEntry> raw;

  const bool array_input = trim(text).front() == '[';
  if (array_input) {
    if (format == DatasetFormat::GenericJsonl || format == DatasetFormat::TranscriptStyle) {
      throw Error(ErrorCode::FormatMismatch,
                  path.string() + ": " + to_string(format) + " expects one object per line");
    }
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_array()) {
      throw Error(ErrorCode::FormatMismatch, path.string() + ": not a valid JSON array");
    }
    for (std::size_t i = 0; i < doc.size(); ++i) raw.push_back({i + 1, doc[i], {}});
  } else {
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (trim(lines[i]).empty()) continue;
      json value = json::parse(lines[i], nullptr, false);
      if (value.is_discarded()) {
        raw.push_back({i + 1, std::nullopt, "invalid JSON"});
      } else {
        raw.push_back({i + 1, std::move(value), {}});
      }
    }
  }

  Corpus corpus;
  corpus.descriptor.format = format;
  corpus.descriptor.path = path;
  const Adapter adapt = adapter_for(format);
  std::unordered_set<std::string> seen;

  auto reject = [&](std::size_t line, std::string reason) {
    if (options.strict) {
      throw Error(ErrorCode::FormatMismatch,
                  path.string() + ":" + std::to_string(line) + ": " + reason);
    }
    corpus.warnings.push_back({line, std::move(reason)});
  };

  std::size_t ordinal = 0;
  for (auto& entry : raw) {
    if (!entry.value) {
      reject(entry.line, entry.parse_error);
      continue;
    }
    try {
      RedTeamRecord record = adapt(*entry.value, ordinal);
      if (!seen.insert(record.id).second) {
        reject(entry.line, "duplicate id '" + record.id + "'");
        continue;
      }
      corpus.records.push_back(std::move(record));
      ++ordinal;
    } catch (const std::invalid_argument& e) {
      reject(entry.line, e.what());
    }
  }

  if (corpus.records.empty()) {
    throw Error(ErrorCode::FormatMismatch,
                path.string() + ": no record parses as " + to_string(format));
  }
  if (!corpus.warnings.empty()) {
    spdlog::warn("{}: skipped {} malformed entries (first at line {}: {})", path.string(),
                 corpus.warnings.size(), corpus.warnings.front().line,
                 corpus.warnings.front().reason);
  }
  corpus.descriptor.record_count = corpus.records.size();
  return corpus;
}

BatchCursor make_cursor(std::size_t batch_size) {
  if (batch_size == 0) throw Error(ErrorCode::ConfigInvalid, "batch_size must be positive");
  return BatchCursor{batch_size, 0};
}

bool exhausted(const Corpus& corpus, const BatchCursor& cursor) {
  return cursor.position >= corpus.records.size();
}

std::vector<RedTeamRecord> next_batch(const Corpus& corpus, BatchCursor& cursor) {
  const std::size_t total = corpus.records.size();
  const std::size_t begin = std::min(cursor.position, total);
  const std::size_t end = std::min(total, begin + cursor.batch_size);
  cursor.position = end;
  return {corpus.records.begin() + static_cast<std::ptrdiff_t>(begin),
          corpus.records.begin() + static_cast<std::ptrdiff_t>(end)};
}

void to_json(json& j, const RedTeamRecord& r) {
  j = json{{"id", r.id}, {"question", r.question}};
  if (r.context) j["context"] = *r.context;
  if (r.topic) j["topic"] = *r.topic;
}

void from_json(const json& j, RedTeamRecord& r) {
  j.at("id").get_to(r.id);
  j.at("question").get_to(r.question);
  r.context = j.contains("context") ? std::optional(j.at("context").get<std::string>()) : std::nullopt;
  r.topic = j.contains("topic") ? std::optional(j.at("topic").get<std::string>()) : std::nullopt;
}

void to_json(json& j, const DatasetDescriptor& d) {
  j = json{{"format", to_string(d.format)}, {"path", d.path.string()}, {"record_count", d.record_count}};
}

void from_json(const json& j, DatasetDescriptor& d) {
  d.format = parse_format(j.at("format").get<std::string>());
  d.path = j.at("path").get<std::string>();
  j.at("record_count").get_to(d.record_count);
}

void to_json(json& j, const BatchCursor& c) {
  j = json{{"batch_size", c.batch_size}, {"position", c.position}};
}

void from_json(const json& j, BatchCursor& c) {
  j.at("batch_size").get_to(c.batch_size);
  j.at("position").get_to(c.position);
}

}  // namespace constalign::corpus
