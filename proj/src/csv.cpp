#include "flowtwin/csv.hpp"

#include <charconv>

namespace flowtwin::csv {

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

Reader::Reader(std::istream& in, std::string source, std::vector<std::string> expected_header)
    : in_(in), source_(std::move(source)), columns_(expected_header.size()) {
  std::string header;
  if (!std::getline(in_, header)) throw ValidationError(source_ + ":1", "missing header");
  line_ = 1;
  if (!header.empty() && header.back() == '\r') header.pop_back();
  // Extra trailing columns are tolerated so files may carry annotations.
  const auto got = split(header);
  for (std::size_t i = 0; i < expected_header.size(); ++i) {
    if (i >= got.size() || got[i] != expected_header[i]) {
      std::string want;
      for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
      throw ValidationError(source_ + ":1", "expected header " + want);
    }
  }
}

bool Reader::next() {
  std::string row;
  while (std::getline(in_, row)) {
    ++line_;
    if (!row.empty() && row.back() == '\r') row.pop_back();
    if (row.empty()) continue;
    fields_ = split(row);
    if (fields_.size() < columns_) throw ValidationError(where(), "expected " + std::to_string(columns_) + " fields");
    return true;
  }
  return false;
}

const std::string& Reader::text(std::size_t i) const { return fields_.at(i); }

double Reader::number(std::size_t i) const {
  const auto& f = fields_.at(i);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || ptr != f.data() + f.size()) throw ValidationError(where(), "not a number: '" + f + "'");
  return v;
}

long long Reader::integer(std::size_t i) const {
  const auto& f = fields_.at(i);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || ptr != f.data() + f.size()) throw ValidationError(where(), "not an integer: '" + f + "'");
  return v;
}

}  // namespace flowtwin::csv
