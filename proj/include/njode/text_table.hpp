#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace njode::text {

// 17 significant digits: parses back to the identical double.
std::string format_double(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// Splits `line` on commas without allocating.
std::vector<std::string_view> split_fields(std::string_view line);

// Iterates over the lines of a buffer, stripping a trailing '\r'.
class LineReader {
 public:
  explicit LineReader(std::string_view buffer) : rest_(buffer) {}
  bool next(std::string_view& line);
  std::size_t line_number() const { return line_no_; }

 private:
  std::string_view rest_;
  std::size_t line_no_ = 0;
};

bool parse_double(std::string_view s, double& out);
bool parse_int(std::string_view s, std::int64_t& out);

}  // namespace njode::text
