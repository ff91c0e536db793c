#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace nl2sql {

// Questions are whitespace-tokenized; token i is the i-th maximal run of
// non-space bytes.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin,
                        std::size_t end);
inline std::string join_tokens(const std::vector<std::string>& tokens) {
  return join_tokens(tokens, 0, tokens.size());
}

// UTF-8 decoding into code points; malformed bytes become U+FFFD.
std::u32string utf8_codepoints(std::string_view text);

// First token index where `needle` occurs as a contiguous token run, or npos.
std::size_t find_token_run(const std::vector<std::string>& haystack,
                           const std::vector<std::string>& needle);

// Code point vocabulary for character embeddings. Id 0 is reserved for
// unknown characters.
class CharVocab {
 public:
  static constexpr std::size_t kUnk = 0;

  CharVocab() = default;
  // Keeps the max_size - 1 most frequent code points (ties by code point).
  static CharVocab build(const std::vector<std::string>& texts, std::size_t max_size);

  std::size_t id(char32_t c) const;
  std::vector<std::size_t> ids(std::string_view text) const;
  std::size_t size() const { return chars_.size() + 1; }

  nlohmann::json to_json() const;
  static CharVocab from_json(const nlohmann::json& j);

 private:
  std::vector<char32_t> chars_;
  std::map<char32_t, std::size_t> index_;
};

}  // namespace nl2sql
