#pragma once

#include "shapewords/core.hpp"

#include <string>
#include <vector>

namespace shapewords {

/// One shape-prompt-image triplet. `prompt` keeps its [SHAPE-ID]
/// placeholder; `category` fills it (falls back to shape_id when absent).
/// Relative paths resolve against the manifest's directory.
struct ManifestRecord {
  std::string shape_id;
  std::string cloud_path;
  std::string prompt;
  std::string image_path;
  int view_index = 0;
  std::string category;

  const std::string& label() const { return category.empty() ? shape_id : category; }
};

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);
/// Throws FormatError naming the first malformed line.
std::vector<ManifestRecord> read_manifest(const std::string& path);
/// Every problem found: malformed lines (with line numbers), missing fields,
/// and unreachable referenced assets. Empty when the manifest is clean.
std::vector<std::string> validate_manifest(const std::string& path);

std::string resolve_asset(const std::string& manifest_path, const std::string& asset);

}  // namespace shapewords
