#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace visionsim {

/// Splits one RFC 4180 line. Returns nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_csv_line(std::string_view line);

/// Quotes the field when it contains a comma, quote or newline.
std::string csv_field(std::string_view value);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace visionsim
