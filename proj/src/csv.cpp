#include "nona/csv.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "nona/errors.hpp"

namespace nona {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::ostream& out, const std::vector<std::string>& header,
                     const std::vector<std::string>& comments)
    : out_(out), columns_(header.size()) {
  for (const std::string& c : comments) out_ << "# " << c << '\n';
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

void CsvWriter::row(std::span<const double> values) {
  if (values.size() != columns_) throw ContractError("CSV row width does not match header");
  for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_double(values[i]);
  out_ << '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) throw ContractError("CSV row width does not match header");
  for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
  out_ << '\n';
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!have_header) {
      table.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw ConfigError("CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(table.header.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const std::string& c : cells) {
      double v = 0.0;
      const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size()) {
        throw ConfigError("CSV line " + std::to_string(line_no) + ": '" + c + "' is not a number");
      }
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
  }
  if (!have_header) throw ConfigError("CSV input has no header row");
  return table;
}

}  // namespace nona
