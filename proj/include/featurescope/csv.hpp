#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace featurescope {

// Shortest round-trip decimal form; "nan" / "inf" / "-inf" for non-finite.
std::string format_number(double value);

// Comma-separated writer with a header row. Values are written verbatim, so
// callers keep them free of commas and quotes.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  CsvWriter& cell(const std::string& text);
  CsvWriter& cell(double value);
  CsvWriter& cell(long long value);
  CsvWriter& cell(int value) { return cell(static_cast<long long>(value)); }
  CsvWriter& cell(long value) { return cell(static_cast<long long>(value)); }
  void end_row();

 private:
  std::ofstream out_;
  std::filesystem::path path_;
  std::size_t columns_ = 0;
  std::size_t pending_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

// Parses a cell as a number; empty cells and "nan" give NaN.
double parse_number(const std::string& text);

}  // namespace featurescope
