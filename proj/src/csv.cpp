#include "featurescope/csv.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "featurescope/error.hpp"

namespace featurescope {

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path, std::ios::trunc), path_(path), columns_(header.size()) {
  if (!out_) fail(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& h : header) cell(h);
  end_row();
}

CsvWriter& CsvWriter::cell(const std::string& text) {
  if (pending_ > 0) out_ << ',';
  out_ << text;
  ++pending_;
  return *this;
}

CsvWriter& CsvWriter::cell(double value) { return cell(format_number(value)); }

CsvWriter& CsvWriter::cell(long long value) { return cell(std::to_string(value)); }

void CsvWriter::end_row() {
  if (pending_ != columns_)
    fail(ErrorKind::Internal, "CSV row in " + path_.string() + " has " + std::to_string(pending_) + " cells, expected " +
                                  std::to_string(columns_));
  out_ << '\n';
  pending_ = 0;
  if (!out_) fail(ErrorKind::Io, "write failed: " + path_.string());
}

std::optional<std::size_t> CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Validation, "cannot open " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Format, "empty CSV: " + path.string());
  table.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != table.header.size())
      fail(ErrorKind::Format, "CSV row width mismatch in " + path.string());
    table.rows.push_back(std::move(cells));
  }
  return table;
}

double parse_number(const std::string& text) {
  if (text.empty() || text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    fail(ErrorKind::Format, "not a number: '" + text + "'");
  return value;
}

}  // namespace featurescope
