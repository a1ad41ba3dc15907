#include "shapewords/manifest.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace shapewords {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kRequired[] = {"shape_id", "cloud_path", "prompt", "image_path", "view_index"};

ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  r.shape_id = j.at("shape_id").get<std::string>();
  r.cloud_path = j.at("cloud_path").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.image_path = j.at("image_path").get<std::string>();
  r.view_index = j.at("view_index").get<int>();
  if (j.contains("category")) r.category = j.at("category").get<std::string>();
  return r;
}

}  // namespace

std::string resolve_asset(const std::string& manifest_path, const std::string& asset) {
  const fs::path p(asset);
  if (p.is_absolute()) return asset;
  return (fs::path(manifest_path).parent_path() / p).string();
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path);
  for (const auto& r : records) {
    json j = {{"shape_id", r.shape_id},     {"cloud_path", r.cloud_path}, {"prompt", r.prompt},
              {"image_path", r.image_path}, {"view_index", r.view_index}};
    if (!r.category.empty()) j["category"] = r.category;
    out << j.dump() << '\n';
  }
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path);
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> validate_manifest(const std::string& path) {
  std::vector<std::string> errors;
  std::ifstream in(path);
  if (!in) return {"manifest not found: " + path};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      errors.push_back(where + ": parse error");
      continue;
    }
    if (!j.is_object()) {
      errors.push_back(where + ": parse error (record is not an object)");
      continue;
    }
    bool complete = true;
    for (const char* field : kRequired)
      if (!j.contains(field)) {
        errors.push_back(where + ": missing field " + field);
        complete = false;
      }
    if (!complete) continue;
    ManifestRecord r;
    try {
      r = record_from_json(j);
    } catch (const json::exception&) {
      errors.push_back(where + ": field has wrong type");
      continue;
    }
    for (const std::string* asset : {&r.cloud_path, &r.image_path}) {
      const std::string resolved = resolve_asset(path, *asset);
      if (!fs::is_regular_file(resolved)) errors.push_back(where + ": missing asset " + resolved);
    }
  }
  return errors;
}

}  // namespace shapewords
