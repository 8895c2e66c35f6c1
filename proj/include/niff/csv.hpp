#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace niff::csv {

/// Shortest round-trip decimal representation.
std::string format(double x);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const;  // throws ConfigError if absent
  std::vector<double> column_values(std::size_t index) const;
};

/// Numeric CSV with one header row. Blank lines and lines starting with '#'
/// are skipped.
Table read(const std::filesystem::path& path);

class Writer {
 public:
  Writer(const std::filesystem::path& path, const std::vector<std::string>& header);

  void row(std::span<const double> values);
  /// Leading integer columns followed by reals.
  void row(std::span<const long long> ints, std::span<const double> values);

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

}  // namespace niff::csv
