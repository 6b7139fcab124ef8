#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace nona {

// 17 significant digits in general notation, locale-independent.
std::string format_double(double value);

// Comma-separated output with a header row and LF line endings. Lines
// starting with '#' are metadata comments that readers skip.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, const std::vector<std::string>& header,
            const std::vector<std::string>& comments = {});

  void row(std::span<const double> values);
  void row(const std::vector<std::string>& cells);

 private:
  std::ostream& out_;
  std::size_t columns_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

// Reads a numeric table; '#' lines and blank lines are ignored.
CsvTable read_csv(std::istream& in);

}  // namespace nona
