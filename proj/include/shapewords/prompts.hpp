#pragma once

#include "shapewords/backends.hpp"

#include <string>
#include <vector>

namespace shapewords {

inline constexpr const char* kShapePlaceholder = "[SHAPE-ID]";
inline constexpr const char* kDefaultBankPattern = "a {adjective} {medium} of a [SHAPE-ID]";

struct PromptTemplate {
  std::string id;
  std::string text;  // exactly one [SHAPE-ID]
};

/// Inclusive token span of the shape word plus the EOS slot.
struct TokenLayout {
  int shape_begin = 1;
  int shape_end = 1;
  int eos_index = 2;
  int content_length = 3;  // begin marker through EOS

  bool in_shape_span(int row) const { return row >= shape_begin && row <= shape_end; }
  void validate() const;
};

/// Number of [SHAPE-ID] occurrences.
int count_placeholders(const std::string& text);

/// Replaces the single placeholder verbatim; throws when it is missing or
/// duplicated, or when the label is empty.
std::string expand_template(const PromptTemplate& tmpl, const std::string& category_label);
std::string expand_template(const std::string& tmpl, const std::string& category_label);

struct PromptBank {
  std::vector<std::string> mediums;
  std::vector<std::string> adjectives;
  std::vector<std::string> prompts;  // medium-major order
};

/// Cartesian product rendered through `pattern` ({medium}, {adjective}).
PromptBank build_prompt_bank(const std::vector<std::string>& mediums, const std::vector<std::string>& adjectives,
                             const std::string& pattern = kDefaultBankPattern);

/// Non-empty trimmed lines of a UTF-8 text file.
std::vector<std::string> read_lines(const std::string& path);
/// Line-delimited {"id", "text"} records.
void write_prompt_bank(const std::string& path, const PromptBank& bank);
std::vector<std::string> read_prompt_bank(const std::string& path);

template <typename Scalar>
struct EncodedPrompt {
  Matrix<Scalar> embedding;  // 77 x D_t
  TokenLayout layout;
  std::vector<std::string> tokens;
};

/// Locates `shape_word`'s tokens in the encoded prompt. The word must occur
/// exactly once; prompts over 77 tokens are rejected by the encoder.
template <typename Scalar>
EncodedPrompt<Scalar> encode_prompt(const TextEncoderBackend<Scalar>& backend, const std::string& text,
                                    const std::string& shape_word) {
  const std::vector<std::string> needle = backend.tokenize(shape_word);
  if (needle.empty()) throw ValidationError("shape word is empty");
  TextEncoding<Scalar> enc = backend.encode(text);
  if (enc.embedding.rows() != kMaxTokens) throw DimensionError("text encoder must emit 77 rows");

  int found = -1, matches = 0;
  const int n = static_cast<int>(needle.size());
  for (int start = 1; start + n <= enc.eos_index; ++start) {
    bool ok = true;
    for (int k = 0; k < n && ok; ++k) ok = enc.tokens[start + k] == needle[k];
    if (ok) {
      found = start;
      ++matches;
    }
  }
  if (matches == 0) throw ValidationError("shape word '" + shape_word + "' not found in prompt '" + text + "'");
  if (matches > 1) throw ValidationError("shape word '" + shape_word + "' occurs more than once in prompt '" + text + "'");

  EncodedPrompt<Scalar> out;
  out.layout.shape_begin = found;
  out.layout.shape_end = found + n - 1;
  out.layout.eos_index = enc.eos_index;
  out.layout.content_length = enc.eos_index + 1;
  out.layout.validate();
  out.embedding = std::move(enc.embedding);
  out.tokens = std::move(enc.tokens);
  return out;
}

}  // namespace shapewords
