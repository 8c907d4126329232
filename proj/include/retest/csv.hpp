#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace retest::io {

// Splits one CSV record. Supports RFC-4180 style quoting with "" escapes.
// Returns nothing when the record is malformed (unbalanced quote, stray
// characters after a closing quote). Embedded newlines are not supported.
std::optional<std::vector<std::string>> try_split_csv_record(std::string_view line);

std::string csv_escape(std::string_view field);

// Strict full-string parse of a finite decimal literal.
std::optional<double> parse_double(std::string_view text);

// Shortest decimal representation that round-trips.
std::string format_double(double v);

// Fixed-point rendering with round-half-even at `precision` decimals.
std::string format_fixed(double v, int precision);

uint64_t fnv1a64(std::string_view bytes);

}  // namespace retest::io
