#pragma once

#include "constalign/oracle.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace constalign::registry {

/// Deduplicated store of proposed constitutions, keyed by normalized-text id.
/// Entries keep insertion order; iterations are non-decreasing.
class ConstitutionRegistry {
 public:
  const std::vector<oracle::Constitution>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const oracle::Constitution* find(const std::string& id) const;

  /// Inserts proposals whose id is absent; returns how many were new.
  std::size_t insert(std::span<const oracle::Constitution> proposed);

  bool operator==(const ConstitutionRegistry& other) const { return entries_ == other.entries_; }

 private:
  std::vector<oracle::Constitution> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct RegisterResult {
  ConstitutionRegistry registry;
  std::size_t new_count = 0;
};

RegisterResult register_constitutions(ConstitutionRegistry registry, std::span<const oracle::Constitution> proposed);

nlohmann::json export_registry(const ConstitutionRegistry& registry);
/// Rebuilds a registry from an export; throws FormatMismatch on invalid
/// entries (id not matching its text, decreasing iterations).
ConstitutionRegistry import_registry(const nlohmann::json& j);

void save_registry(const ConstitutionRegistry& registry, const std::filesystem::path& path);
ConstitutionRegistry load_registry(const std::filesystem::path& path);

/// Plain-text listing grouped by iteration.
std::string format_registry(const ConstitutionRegistry& registry);

}  // namespace constalign::registry
