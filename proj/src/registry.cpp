#include "constalign/registry.hpp"

#include "constalign/util.hpp"

#include <sstream>

namespace constalign::registry {

using json = nlohmann::json;

const oracle::Constitution* ConstitutionRegistry::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

std::size_t ConstitutionRegistry::insert(std::span<const oracle::Constitution> proposed) {
  std::size_t added = 0;
  for (const auto& c : proposed) {
    if (index_.count(c.id)) continue;
    if (!entries_.empty() && c.iteration < entries_.back().iteration) {
      throw Error(ErrorCode::PreconditionFailed, "constitution " + c.id + " has iteration " +
                                                     std::to_string(c.iteration) + " below the registry's latest");
    }
    index_.emplace(c.id, entries_.size());
    entries_.push_back(c);
    ++added;
  }
  return added;
}

RegisterResult register_constitutions(ConstitutionRegistry registry, std::span<const oracle::Constitution> proposed) {
  const std::size_t added = registry.insert(proposed);
  return {std::move(registry), added};
}

json export_registry(const ConstitutionRegistry& registry) {
  return json{{"version", 1}, {"constitutions", registry.entries()}};
}

ConstitutionRegistry import_registry(const json& j) {
  ConstitutionRegistry registry;
  try {
    for (const auto& entry : j.at("constitutions")) {
      auto c = entry.get<oracle::Constitution>();
      if (c.id != oracle::constitution_id(c.text)) {
        throw Error(ErrorCode::FormatMismatch, "constitution id " + c.id + " does not match its text");
      }
      if (registry.insert(std::span(&c, 1)) != 1) {
        throw Error(ErrorCode::FormatMismatch, "duplicate constitution id " + c.id);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatMismatch, std::string("registry export: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::PreconditionFailed) throw Error(ErrorCode::FormatMismatch, e.what());
    throw;
  }
  return registry;
}

void save_registry(const ConstitutionRegistry& registry, const std::filesystem::path& path) {
  write_text_file_atomic(path, export_registry(registry).dump(2) + "\n");
}

ConstitutionRegistry load_registry(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::MissingRegistry, "no registry at " + path.string());
  }
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::FormatMismatch, path.string() + " is not JSON");
  return import_registry(j);
}

std::string format_registry(const ConstitutionRegistry& registry) {
  std::ostringstream out;
  out << registry.size() << " constitution(s)\n";
  int current = -1;
  for (const auto& c : registry.entries()) {
    if (c.iteration != current) {
      current = c.iteration;
      out << "\nIteration " << current << ":\n";
    }
    out << "  [" << c.id << "] " << c.text << "\n";
    out << "      from " << c.source_record_ids.size() << " record(s)";
    if (!c.proposer_transcript_ref.empty()) out << ", transcript " << c.proposer_transcript_ref;
    out << "\n";
  }
  return out.str();
}

}  // namespace constalign::registry
