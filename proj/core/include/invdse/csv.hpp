#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace invdse::csv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Column index by name; throws ParseError when absent.
  std::size_t column(std::string_view name) const;
};

/// Splits one line on commas. Fields are never quoted in the files this project writes.
std::vector<std::string> split_line(std::string_view line);

/// Reads a headered CSV file. Blank lines are skipped; every row must match the header width.
Table read(const std::filesystem::path& path);

double parse_double(std::string_view field, std::size_t line);
long long parse_int(std::string_view field, std::size_t line);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

std::string join(const std::vector<std::string>& fields, std::string_view separator = ",");

}  // namespace invdse::csv
