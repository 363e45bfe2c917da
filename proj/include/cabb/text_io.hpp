#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cabb::text {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

/// Strict full-string parse; returns false on trailing garbage or overflow.
bool parse_double(std::string_view s, double& out);
bool parse_int(std::string_view s, long long& out);

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

}  // namespace cabb::text
