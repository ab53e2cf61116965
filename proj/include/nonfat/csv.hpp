#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace nonfat::csv {

/// Locale-independent, 17 significant digits.
std::string format_real(double x);

std::vector<std::string_view> split(std::string_view line, char sep = ',');

std::string_view trim(std::string_view s);

/// Strict parses; return false on any trailing garbage.
bool parse_real(std::string_view field, double& out);
bool parse_int(std::string_view field, long long& out);

}  // namespace nonfat::csv
