#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace hbkmr::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or -1.
  int column(std::string_view name) const;
};

// RFC-4180 reader: quoted fields, doubled quotes, CRLF or LF line endings.
Table parse(std::istream& in);
Table read_file(const std::string& path);

std::string quote(std::string_view field);
// Shortest round-trippable representation of a double.
std::string format_double(double v);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace hbkmr::csv
