#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace slrgrowth::io {

/// A header-indexed CSV table held in memory. Cells are kept as text;
/// numeric interpretation is left to the caller.
class CsvTable {
 public:
  CsvTable() = default;
  CsvTable(std::vector<std::string> header, std::vector<std::vector<std::string>> rows);

  static CsvTable read(const std::string& path);
  static CsvTable parse(std::istream& in, const std::string& source = "<stream>");

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }
  bool has_column(std::string_view name) const;
  std::size_t column(std::string_view name) const;  // throws SchemaError
  const std::string& cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  const std::string& cell(std::size_t row, std::string_view name) const {
    return rows_[row][column(name)];
  }
  const std::string& source() const { return source_; }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string source_;
};

/// Splits one CSV record honouring double-quoted fields.
std::vector<std::string> split_record(std::string_view line);

}  // namespace slrgrowth::io
