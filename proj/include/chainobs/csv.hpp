#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace chainobs::csv {

/// Splits one RFC 4180 line. Quoted fields may contain commas and doubled
/// quotes; embedded newlines are not supported. Returns false on an
/// unterminated quote.
bool split_line(std::string_view line, std::vector<std::string>& fields);

std::string quote(std::string_view field);

/// Writes one row, quoting only where needed.
void write_row(std::ostream& out, const std::vector<std::string>& fields);

std::string format_double(double value);

} // namespace chainobs::csv
