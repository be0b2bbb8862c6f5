#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/error.hpp"
#include "xmodal/store.hpp"

namespace xmodal {

/// Item metadata. Entry i describes the pair (image i, description i).
struct CatalogEntry {
  ItemId item_id = 0;
  std::string external_id;
  std::string description;
  std::string image_uri;
  std::string source_url;
};

inline nlohmann::json to_json(const CatalogEntry& e) {
  return {{"item_id", e.item_id},
          {"external_id", e.external_id},
          {"description", e.description},
          {"image_uri", e.image_uri},
          {"source_url", e.source_url}};
}

/// Reads a JSON-lines catalog; line number (0-based, blank lines excluded
/// only at the end of the file) is the item id.
inline std::vector<CatalogEntry> load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StoreError(StoreErrc::missing_file, path, "cannot open catalog");
  std::vector<CatalogEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  std::size_t pending_blank = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      ++pending_blank;
      continue;
    }
    if (pending_blank)
      throw StoreError(StoreErrc::bad_catalog, path,
                       "blank line before line " + std::to_string(lineno) +
                           " would leave a gap in item ids");
    auto fail = [&](const std::string& msg) {
      throw StoreError(StoreErrc::bad_catalog, path,
                       "line " + std::to_string(lineno) + ": " + msg);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(e.what());
    }
    if (!j.is_object()) fail("expected a JSON object");
    CatalogEntry e;
    e.item_id = entries.size();
    for (auto [key, field] : {std::pair{"external_id", &e.external_id},
                              std::pair{"description", &e.description},
                              std::pair{"image_uri", &e.image_uri},
                              std::pair{"source_url", &e.source_url}}) {
      auto it = j.find(key);
      if (it == j.end() || !it->is_string()) fail(std::string("missing string field '") + key + "'");
      *field = it->get<std::string>();
    }
    if (e.description.empty()) fail("empty description");
    entries.push_back(std::move(e));
  }
  return entries;
}

inline void write_catalog(const std::vector<CatalogEntry>& entries,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StoreError(StoreErrc::io, path, "cannot create catalog");
  for (const auto& e : entries) {
    nlohmann::json j = {{"external_id", e.external_id},
                        {"description", e.description},
                        {"image_uri", e.image_uri},
                        {"source_url", e.source_url}};
    out << j.dump() << '\n';
  }
  if (!out) throw StoreError(StoreErrc::io, path, "write failed");
}

}  // namespace xmodal
