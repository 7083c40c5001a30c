#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fairmix::csv {

/// A parsed CSV file with a header row. Fields may be double-quoted; quotes
/// inside quoted fields are doubled.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based source line of each row (for diagnostics).
  std::vector<std::size_t> lines;

  std::optional<std::size_t> column(std::string_view name) const;
  /// Throws std::runtime_error naming the file when the column is missing.
  std::size_t require_column(std::string_view name) const;

  std::string source;
};

std::vector<std::string> split_line(std::string_view line);
Table parse(std::string_view text, std::string source = "<memory>");
Table read_file(const std::filesystem::path& path);

/// Quotes a field only when it contains a comma, quote, or newline.
std::string escape(std::string_view field);
std::string join(const std::vector<std::string>& fields);

double to_double(std::string_view field, std::string_view what);
long long to_int(std::string_view field, std::string_view what);

}  // namespace fairmix::csv
