#pragma once

#include "flowtwin/common.hpp"

#include <fmt/format.h>

#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace flowtwin::csv {

// Minimal reader for the project's headered, comma-separated files. Fields
// never contain commas or quotes.
class Reader {
 public:
  Reader(std::istream& in, std::string source, std::vector<std::string> expected_header);

  // False at end of input. Blank lines are skipped.
  bool next();
  std::size_t line() const { return line_; }
  std::size_t size() const { return fields_.size(); }

  const std::string& text(std::size_t i) const;
  double number(std::size_t i) const;
  long long integer(std::size_t i) const;
  // Location string for error reports, "source:line".
  std::string where() const { return source_ + ":" + std::to_string(line_); }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t columns_ = 0;
  std::size_t line_ = 0;
  std::vector<std::string> fields_;
};

std::vector<std::string> split(std::string_view line, char sep = ',');

// Shortest representation that round-trips exactly.
inline std::string num(double x) { return fmt::format("{}", x); }

}  // namespace flowtwin::csv
