#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace blife {

/// Line-at-a-time reader over a text stream. Strips a trailing '\r'.
class LineSource {
 public:
  virtual ~LineSource() = default;
  /// Returns false at end of input.
  virtual bool next(std::string& line) = 0;
};

class StreamLineSource final : public LineSource {
 public:
  explicit StreamLineSource(std::istream& in) : in_(in) {}
  bool next(std::string& line) override;

 private:
  std::istream& in_;
};

/// Opens a plain or gzip-compressed (".gz" suffix) text file.
/// Throws std::runtime_error if the file cannot be opened.
std::unique_ptr<LineSource> open_lines(const std::filesystem::path& path);

/// Splits on ',' without quoting rules; the ingestion formats never quote.
void split_fields(std::string_view line, std::vector<std::string_view>& out);

std::optional<std::int64_t> parse_int(std::string_view s);
std::optional<double> parse_double(std::string_view s);

/// Shortest representation that round-trips through parse_double.
std::string format_double(double v);

/// Hex FNV-1a digest of a file's bytes (decompressed content is not used).
std::string file_digest(const std::filesystem::path& path);

std::string trim(std::string_view s);

}  // namespace blife
