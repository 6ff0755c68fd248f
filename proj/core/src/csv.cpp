#include "ktb/csv.hpp"

#include "ktb/errors.hpp"

namespace ktb {

CsvReader::CsvReader(const std::filesystem::path& path, char delimiter)
    : in_(path, std::ios::binary), delimiter_(delimiter) {
  if (!in_) throw DataError("cannot open " + path.string());
}

bool CsvReader::next(std::vector<std::string>& fields) {
  fields.clear();
  std::string line;
  if (!std::getline(in_, line)) return false;
  ++line_;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (;;) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char ch = line[i];
      any = true;
      if (quoted) {
        if (ch == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            field.push_back('"');
            ++i;
          } else {
            quoted = false;
          }
        } else {
          field.push_back(ch);
        }
      } else if (ch == '"') {
        quoted = true;
      } else if (ch == delimiter_) {
        fields.push_back(std::move(field));
        field.clear();
      } else if (ch == '\r' && i + 1 == line.size()) {
        // CRLF line ending
      } else {
        field.push_back(ch);
      }
    }
    if (!quoted) break;
    // Quoted field continues on the next physical line.
    if (!std::getline(in_, line)) break;
    ++line_;
    field.push_back('\n');
  }
  if (any || !fields.empty()) fields.push_back(std::move(field));
  return true;
}

std::string csv_escape(std::string_view field, char delimiter) {
  const bool needs = field.find_first_of(std::string{delimiter, '"', '\n', '\r'}) !=
                     std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

}  // namespace ktb
