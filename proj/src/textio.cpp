#include "blife/textio.hpp"

#include <zlib.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "blife/rng.hpp"

namespace blife {

namespace {

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

class FileLineSource final : public LineSource {
 public:
  explicit FileLineSource(const std::filesystem::path& path) : in_(path) {
    if (!in_) throw std::runtime_error("cannot open " + path.string());
  }
  bool next(std::string& line) override {
    if (!std::getline(in_, line)) return false;
    strip_cr(line);
    return true;
  }

 private:
  std::ifstream in_;
};

class GzLineSource final : public LineSource {
 public:
  explicit GzLineSource(const std::filesystem::path& path)
      : file_(gzopen(path.c_str(), "rb")) {
    if (file_ == nullptr) throw std::runtime_error("cannot open " + path.string());
  }
  ~GzLineSource() override { gzclose(file_); }
  GzLineSource(const GzLineSource&) = delete;
  GzLineSource& operator=(const GzLineSource&) = delete;

  bool next(std::string& line) override {
    line.clear();
    char buf[4096];
    bool got = false;
    while (gzgets(file_, buf, sizeof buf) != nullptr) {
      got = true;
      line.append(buf);
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        break;
      }
    }
    if (!got) {
      int err = Z_OK;
      gzerror(file_, &err);
      if (err != Z_OK && err != Z_STREAM_END) throw std::runtime_error("gzip read error");
      return false;
    }
    strip_cr(line);
    return true;
  }

 private:
  gzFile file_;
};

}  // namespace

bool StreamLineSource::next(std::string& line) {
  if (!std::getline(in_, line)) return false;
  strip_cr(line);
  return true;
}

std::unique_ptr<LineSource> open_lines(const std::filesystem::path& path) {
  if (path.extension() == ".gz") return std::make_unique<GzLineSource>(path);
  return std::make_unique<FileLineSource>(path);
}

void split_fields(std::string_view line, std::vector<std::string_view>& out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

namespace {
std::string_view trim_spaces(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}
}  // namespace

std::optional<std::int64_t> parse_int(std::string_view s) {
  s = trim_spaces(s);
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || s.empty()) return std::nullopt;
  return v;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim_spaces(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double");
  return std::string(buf, ptr);
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace blife
