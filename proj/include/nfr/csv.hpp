#pragma once

#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace nfr {

/// Shortest-round-trip-safe text form of a double (17 significant digits).
std::string format_double(double v);

/// Writes a CSV file row by row; floats use format_double.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  void row(std::span<const double> values);
  void row(std::initializer_list<double> values) { row(std::span<const double>(values.begin(), values.size())); }
  /// Leading integer column (epoch, index, ...) followed by floats.
  void row(long long key, std::span<const double> values);

 private:
  std::ofstream out_;
  std::string path_;
};

/// Parsed CSV: header names and numeric rows.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::string& path);

}  // namespace nfr
