#include "invdse/csv.hpp"

#include <charconv>
#include <fstream>

#include <fmt/format.h>

#include "invdse/errors.hpp"

namespace invdse::csv {

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw ParseError("missing CSV column '" + std::string(name) + "'", 1);
}

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'", 0);
  Table table;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw ParseError(fmt::format("{}: expected {} fields, found {}", path.string(),
                                   table.header.size(), fields.size()),
                       lineno);
    }
    table.rows.push_back(Row{lineno, std::move(fields)});
  }
  if (!have_header) throw ParseError(path.string() + ": empty CSV file", 0);
  return table;
}

double parse_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw ParseError("not a number: '" + std::string(field) + "'", line);
  }
  return v;
}

long long parse_int(std::string_view field, std::size_t line) {
  long long v = 0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw ParseError("not an integer: '" + std::string(field) + "'", line);
  }
  return v;
}

std::string format_double(double v) { return fmt::format("{}", v); }

std::string join(const std::vector<std::string>& fields, std::string_view separator) {
  return fmt::format("{}", fmt::join(fields, separator));
}

}  // namespace invdse::csv
