#include "nl2sql/numeric.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

namespace nl2sql {

std::optional<double> parse_number(std::string_view text) {
  if (text.empty()) return std::nullopt;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (*first == '+') ++first;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

namespace {

bool is_exact_integer(double value) {
  return std::nearbyint(value) == value && std::fabs(value) < 9.0e15;
}

}  // namespace

std::string render_number(double value) {
  if (value == 0.0) return "0";
  if (is_exact_integer(value)) {
    return std::to_string(static_cast<std::int64_t>(value));
  }
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

nlohmann::json number_to_json(double value) {
  if (value == 0.0) return 0;
  if (is_exact_integer(value)) return static_cast<std::int64_t>(value);
  return value;
}

std::string nfc(std::string_view text) {
  bool ascii = true;
  for (unsigned char c : text) {
    if (c >= 0x80) {
      ascii = false;
      break;
    }
  }
  if (ascii) return std::string(text);

  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) return std::string(text);
  icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString out = norm->normalize(src, status);
  if (U_FAILURE(status)) return std::string(text);
  std::string result;
  out.toUTF8String(result);
  return result;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace nl2sql
