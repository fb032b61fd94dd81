#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace advids::detail {

// Comma-separated cells, trimmed, with surrounding double quotes removed.
std::vector<std::string_view> split_csv_line(std::string_view line);

// Locale-independent, whole-cell parse; rejects NaN and infinities.
std::optional<double> parse_double(std::string_view cell);

// Shortest representation that reads back to the same double.
std::string format_double(double value);

}  // namespace advids::detail
