#include "shapewords/prompts.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace shapewords {

void TokenLayout::validate() const {
  if (shape_begin < 1 || shape_end < shape_begin) throw ValidationError("token layout: empty or misplaced shape span");
  if (eos_index <= shape_end) throw ValidationError("token layout: shape span must precede EOS");
  if (eos_index >= kMaxTokens) throw ValidationError("token layout: EOS index beyond 77 tokens");
  if (content_length != eos_index + 1) throw ValidationError("token layout: content length disagrees with EOS index");
}

int count_placeholders(const std::string& text) {
  const std::string ph = kShapePlaceholder;
  int n = 0;
  for (auto pos = text.find(ph); pos != std::string::npos; pos = text.find(ph, pos + ph.size())) ++n;
  return n;
}

std::string expand_template(const std::string& tmpl, const std::string& category_label) {
  if (category_label.empty()) throw ValidationError("category label is empty");
  const int n = count_placeholders(tmpl);
  if (n == 0) throw ValidationError("prompt template has no [SHAPE-ID] placeholder: '" + tmpl + "'");
  if (n > 1) throw ValidationError("prompt template has more than one [SHAPE-ID] placeholder: '" + tmpl + "'");
  std::string out = tmpl;
  out.replace(out.find(kShapePlaceholder), std::string(kShapePlaceholder).size(), category_label);
  return out;
}

std::string expand_template(const PromptTemplate& tmpl, const std::string& category_label) {
  return expand_template(tmpl.text, category_label);
}

namespace {

void require_unique(const std::vector<std::string>& items, const char* what) {
  if (items.empty()) throw ValidationError(std::string(what) + " list is empty");
  std::set<std::string> seen;
  for (const auto& s : items) {
    if (s.empty()) throw ValidationError(std::string(what) + " list contains an empty entry");
    if (!seen.insert(s).second) throw ValidationError(std::string("duplicate ") + what + ": '" + s + "'");
  }
}

void replace_all(std::string& s, const std::string& key, const std::string& value) {
  for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) s.replace(pos, key.size(), value);
}

}  // namespace

PromptBank build_prompt_bank(const std::vector<std::string>& mediums, const std::vector<std::string>& adjectives,
                             const std::string& pattern) {
  require_unique(mediums, "medium");
  require_unique(adjectives, "adjective");
  if (count_placeholders(pattern) != 1) throw ValidationError("bank pattern must contain exactly one [SHAPE-ID]");

  PromptBank bank{mediums, adjectives, {}};
  bank.prompts.reserve(mediums.size() * adjectives.size());
  std::set<std::string> seen;
  for (const auto& m : mediums)
    for (const auto& a : adjectives) {
      std::string p = pattern;
      replace_all(p, "{medium}", m);
      replace_all(p, "{adjective}", a);
      if (!seen.insert(p).second) throw ValidationError("bank pattern renders duplicate prompt '" + p + "'");
      bank.prompts.push_back(std::move(p));
    }
  return bank;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.push_back(line.substr(b, e - b + 1));
  }
  return out;
}

void write_prompt_bank(const std::string& path, const PromptBank& bank) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (std::size_t i = 0; i < bank.prompts.size(); ++i)
    out << nlohmann::json{{"id", i}, {"text", bank.prompts[i]}}.dump() << '\n';
}

std::vector<std::string> read_prompt_bank(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open prompt bank " + path);
  std::vector<std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).at("text").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace shapewords
