#include "retest/csv.hpp"

#include <charconv>
#include <cfenv>
#include <cmath>
#include <cstdio>

namespace retest::io {

std::optional<std::vector<std::string>> try_split_csv_record(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::vector<std::string> fields;
    std::string current;
    bool in_quotes = false;
    bool was_quoted = false;

    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    current.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                current.push_back(c);
            }
        } else if (c == '"') {
            if (!current.empty() || was_quoted) return std::nullopt;  // quote mid-field
            in_quotes = true;
            was_quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(current));
            current.clear();
            was_quoted = false;
        } else {
            if (was_quoted) return std::nullopt;  // text after closing quote
            current.push_back(c);
        }
    }
    if (in_quotes) return std::nullopt;
    fields.push_back(std::move(current));
    return fields;
}

std::string csv_escape(std::string_view field) {
    const bool needs_quotes =
        field.find_first_of(",\"\r\n") != std::string_view::npos;
    if (!needs_quotes) return std::string(field);
    std::string out;
    out.reserve(field.size() + 2);
    out.push_back('"');
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::optional<double> parse_double(std::string_view text) {
    if (text.empty()) return std::nullopt;
    double value = 0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) return std::nullopt;
    if (!std::isfinite(value)) return std::nullopt;
    return value;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

std::string format_fixed(double v, int precision) {
    if (precision < 0) precision = 0;
    double scale = 1.0;
    for (int i = 0; i < precision; ++i) scale *= 10.0;
    // nearbyint honours the default FE_TONEAREST mode (ties to even).
    double rounded = std::nearbyint(v * scale) / scale;
    if (rounded == 0.0) rounded = 0.0;  // normalise -0
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, rounded);
    return buf;
}

uint64_t fnv1a64(std::string_view bytes) {
    uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

}  // namespace retest::io
