#pragma once

#include <string>
#include <vector>

namespace steinmc {

// Shortest decimal form that round-trips to the same double.
std::string csv_double(double v);

// Quotes a field when it holds a comma, quote or newline.
std::string csv_field(const std::string& s);

std::string csv_line(const std::vector<std::string>& fields);

// Splits one CSV line, honouring quoted fields.
std::vector<std::string> csv_split(const std::string& line);

}  // namespace steinmc
