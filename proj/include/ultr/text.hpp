#pragma once

#include <charconv>
#include <string>
#include <vector>

namespace ultr {

/// Shortest round-trip decimal form ("." separator, locale independent).
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Fixed notation with `digits` decimals.
inline std::string format_fixed(double v, int digits) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

/// Joins already-formatted fields with commas, quoting fields that need it.
std::string csv_row(const std::vector<std::string>& fields);
/// Splits one CSV line (RFC 4180 quoting, no embedded newlines).
std::vector<std::string> parse_csv_row(const std::string& line);

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

}  // namespace ultr
