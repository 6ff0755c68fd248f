#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace ktb {

// Minimal RFC 4180 reader: quoted fields may contain the delimiter, doubled
// quotes and line breaks. A trailing '\r' is stripped from every record.
class CsvReader {
 public:
  CsvReader(const std::filesystem::path& path, char delimiter);

  // Reads the next record into fields. Returns false at end of input.
  bool next(std::vector<std::string>& fields);
  std::size_t line() const { return line_; }

 private:
  std::ifstream in_;
  char delimiter_;
  std::size_t line_ = 0;
};

// Quotes a field when it contains the delimiter, a quote or a line break.
std::string csv_escape(std::string_view field, char delimiter = ',');

}  // namespace ktb
