#include "nfr/csv.hpp"

#include <charconv>
#include <sstream>

#include "nfr/error.hpp"

namespace nfr {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return {buf, res.ptr};
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
  if (!out_) throw Error("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

void CsvWriter::row(std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_double(values[i]);
  out_ << '\n';
  if (!out_) throw Error("write to '" + path_ + "' failed");
}

void CsvWriter::row(long long key, std::span<const double> values) {
  out_ << key;
  for (double v : values) out_ << ',' << format_double(v);
  out_ << '\n';
  if (!out_) throw Error("write to '" + path_ + "' failed");
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("'" + path + "' is empty");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) table.header.push_back(cell);
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw FormatError("'" + path + "' line " + std::to_string(line_no) + ": '" + cell + "' is not a number");
      values.push_back(v);
    }
    if (values.size() != table.header.size())
      throw FormatError("'" + path + "' line " + std::to_string(line_no) + " has " + std::to_string(values.size()) +
                        " fields, expected " + std::to_string(table.header.size()));
    table.rows.push_back(std::move(values));
  }
  return table;
}

}  // namespace nfr
