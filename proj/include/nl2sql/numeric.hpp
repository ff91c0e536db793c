#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace nl2sql {

// Parses a complete finite decimal literal ("12", "-3.5", "1e3").
// Leading/trailing whitespace or any trailing junk makes it fail.
std::optional<double> parse_number(std::string_view text);

// Shortest round-trip rendering; integral values print without a fraction
// ("5", not "5.0").
std::string render_number(double value);

// JSON number using the same rendering rule (integral values as integers).
nlohmann::json number_to_json(double value);

// Unicode NFC normalization of UTF-8 text.
std::string nfc(std::string_view text);

// 64-bit FNV-1a, used for config fingerprints in logs.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace nl2sql
