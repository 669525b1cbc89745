#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace afdgcn {

/// Malformed or inconsistent input files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Whole-field parse; throws DataError naming `what` on failure.
double parse_double(std::string_view text, std::string_view what);
long long parse_integer(std::string_view text, std::string_view what);

std::vector<std::string_view> split_fields(std::string_view line, char sep = ',');

/// Lines of a text file with trailing CR stripped. Throws DataError if the
/// file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes `text` verbatim (binary mode, so LF stays LF).
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace afdgcn
