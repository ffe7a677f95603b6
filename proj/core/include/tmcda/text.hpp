#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tmcda::text {

// Shortest round-trip decimal representation.
std::string format_number(double value);

// Strict parse: the whole field must be a finite number.
std::optional<double> parse_number(std::string_view field);

std::string_view trim(std::string_view s);
std::string lowercase(std::string_view s);

// Splits one comma-separated line. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_csv(std::string_view line);

// Quotes a field only when it contains a comma, quote or newline.
std::string csv_field(std::string_view field);

// Comma-separated list of numbers, e.g. "0, 0.25, 0.5".
std::vector<double> parse_number_list(std::string_view list);

}  // namespace tmcda::text
