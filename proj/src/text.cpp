#include "nl2sql/text.hpp"

#include <algorithm>

#include "nl2sql/errors.hpp"

namespace nl2sql {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' ||
                               text[i] == '\r')) {
      ++i;
    }
    std::size_t start = i;
    while (i < text.size() && !(text[i] == ' ' || text[i] == '\t' || text[i] == '\n' ||
                                text[i] == '\r')) {
      ++i;
    }
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin,
                        std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end && i < tokens.size(); ++i) {
    if (i > begin) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::u32string utf8_codepoints(std::string_view text) {
  std::u32string out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > text.size()) {
      out.push_back(U'�');
      ++i;
      continue;
    }
    char32_t cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (!ok) {
      out.push_back(U'�');
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::size_t find_token_run(const std::vector<std::string>& haystack,
                           const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::string::npos;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool hit = true;
    for (std::size_t k = 0; k < needle.size(); ++k) {
      if (haystack[i + k] != needle[k]) {
        hit = false;
        break;
      }
    }
    if (hit) return i;
  }
  return std::string::npos;
}

CharVocab CharVocab::build(const std::vector<std::string>& texts, std::size_t max_size) {
  std::map<char32_t, std::size_t> counts;
  for (const auto& t : texts) {
    for (char32_t c : utf8_codepoints(t)) ++counts[c];
  }
  std::vector<std::pair<char32_t, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_size > 0 && ranked.size() > max_size - 1) ranked.resize(max_size - 1);
  std::sort(ranked.begin(), ranked.end());
  CharVocab v;
  for (const auto& [c, n] : ranked) {
    v.index_[c] = v.chars_.size() + 1;
    v.chars_.push_back(c);
  }
  return v;
}

std::size_t CharVocab::id(char32_t c) const {
  auto it = index_.find(c);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> CharVocab::ids(std::string_view text) const {
  std::vector<std::size_t> out;
  for (char32_t c : utf8_codepoints(text)) out.push_back(id(c));
  return out;
}

nlohmann::json CharVocab::to_json() const {
  auto arr = nlohmann::json::array();
  for (char32_t c : chars_) arr.push_back(static_cast<std::uint32_t>(c));
  return arr;
}

CharVocab CharVocab::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("char vocabulary must be an array of code points");
  CharVocab v;
  for (const auto& c : j) {
    const auto cp = static_cast<char32_t>(c.get<std::uint32_t>());
    if (v.index_.count(cp)) throw ParseError("duplicate code point in char vocabulary");
    v.index_[cp] = v.chars_.size() + 1;
    v.chars_.push_back(cp);
  }
  return v;
}

}  // namespace nl2sql
