#include "slrgrowth/csv.hpp"

#include <fstream>
#include <istream>
#include <sstream>

#include "slrgrowth/error.hpp"

namespace slrgrowth::io {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::vector<std::string> split_record(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(trim(field));
  return out;
}

CsvTable::CsvTable(std::vector<std::string> header, std::vector<std::vector<std::string>> rows)
    : header_(std::move(header)), rows_(std::move(rows)) {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (!index_.emplace(header_[i], i).second) {
      throw SchemaError("duplicate column '" + header_[i] + "'");
    }
  }
}

CsvTable CsvTable::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return parse(in, path);
}

CsvTable CsvTable::parse(std::istream& in, const std::string& source) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    header = split_record(line);
    break;
  }
  if (header.empty()) throw SchemaError(source + ": missing header row");
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto rec = split_record(line);
    if (rec.size() != header.size()) {
      std::ostringstream msg;
      msg << source << ":" << line_no << ": expected " << header.size() << " fields, got "
          << rec.size();
      throw SchemaError(msg.str());
    }
    rows.push_back(std::move(rec));
  }
  CsvTable t(std::move(header), std::move(rows));
  t.source_ = source;
  return t;
}

bool CsvTable::has_column(std::string_view name) const {
  return index_.find(std::string(name)) != index_.end();
}

std::size_t CsvTable::column(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw SchemaError(source_ + ": missing column '" + std::string(name) + "'");
  }
  return it->second;
}

}  // namespace slrgrowth::io
