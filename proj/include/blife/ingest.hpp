#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blife/textio.hpp"

namespace blife {

/// Epoch seconds.
using Timestamp = std::int64_t;

enum class ChargeState : std::uint8_t { Charge, Discharge };
enum class ScreenAction : std::uint8_t { On, Off };
enum class AppState : std::uint8_t { Foreground, Background };
enum class SensorGroup : std::uint8_t { T1, T2 };

/// Broadcast ids outside the configured vocabulary are stored as this value.
inline constexpr int kOtherBroadcast = -1;

/// Missing sensor slots are quiet NaNs.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

struct BatteryEntry {
  std::string user_id;
  Timestamp timestamp = 0;
  ChargeState state = ChargeState::Discharge;
  int level = 0;
  friend bool operator==(const BatteryEntry&, const BatteryEntry&) = default;
};

struct ScreenEvent {
  std::string user_id;
  Timestamp timestamp = 0;
  ScreenAction action = ScreenAction::Off;
  friend bool operator==(const ScreenEvent&, const ScreenEvent&) = default;
};

struct BroadcastEvent {
  std::string user_id;
  Timestamp timestamp = 0;
  int broadcast_type = 0;
  friend bool operator==(const BroadcastEvent&, const BroadcastEvent&) = default;
};

struct AppSample {
  std::string user_id;
  Timestamp timestamp = 0;
  std::string app_id;
  AppState state = AppState::Foreground;
  friend bool operator==(const AppSample&, const AppSample&) = default;
};

struct SensorSample {
  std::string user_id;
  Timestamp timestamp = 0;
  SensorGroup group = SensorGroup::T1;
  std::vector<double> values;  // kMissing marks an empty cell

  friend bool operator==(const SensorSample& a, const SensorSample& b) {
    if (a.user_id != b.user_id || a.timestamp != b.timestamp || a.group != b.group ||
        a.values.size() != b.values.size())
      return false;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      const bool ma = is_missing(a.values[i]), mb = is_missing(b.values[i]);
      if (ma != mb || (!ma && a.values[i] != b.values[i])) return false;
    }
    return true;
  }
};

enum class LineErrorKind { FieldCount, BadTimestamp, BadLevel, BadState, BadValue, WidthMismatch };

const char* to_string(LineErrorKind kind);

struct LineError {
  std::size_t line = 0;  // 1-based physical line number
  LineErrorKind kind = LineErrorKind::FieldCount;
  std::string text;
};

struct ParseOptions {
  double max_error_rate = 0.01;
  std::size_t max_reported_errors = 100;
  int n_broadcast_types = 86;
  int t1_width = 9;
  int t2_width = 150;
};

struct ParseReport {
  std::size_t data_lines = 0;
  std::size_t records = 0;
  std::size_t error_count = 0;
  std::size_t other_broadcasts = 0;
  std::vector<LineError> errors;  // first max_reported_errors only
};

/// Fatal ingestion failure: missing/invalid header or error rate above the cap.
class IngestError : public std::runtime_error {
 public:
  enum class Kind { MissingHeader, WidthMismatch, ErrorRateExceeded };
  IngestError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

template <typename T>
using Sink = std::function<void(T&&)>;

// Streaming parsers: records are handed to `sink` in file order.
ParseReport parse_battery_log(LineSource& in, const Sink<BatteryEntry>& sink,
                              const ParseOptions& opts = {});
ParseReport parse_screen_log(LineSource& in, const Sink<ScreenEvent>& sink,
                             const ParseOptions& opts = {});
ParseReport parse_broadcast_log(LineSource& in, const Sink<BroadcastEvent>& sink,
                                const ParseOptions& opts = {});
ParseReport parse_app_log(LineSource& in, const Sink<AppSample>& sink,
                          const ParseOptions& opts = {});
ParseReport parse_sensor_log(LineSource& in, SensorGroup group, const Sink<SensorSample>& sink,
                             const ParseOptions& opts = {});

/// Collects every record of a streaming parser into a vector.
template <typename T, typename Parser>
std::vector<T> collect(Parser&& parser, ParseReport* report = nullptr) {
  std::vector<T> out;
  ParseReport r = parser([&](T&& v) { out.push_back(std::move(v)); });
  if (report != nullptr) *report = std::move(r);
  return out;
}

// Writers emit the exact format the parsers accept.
void write_battery_log(std::ostream& out, std::span<const BatteryEntry> entries);
void write_screen_log(std::ostream& out, std::span<const ScreenEvent> events);
void write_broadcast_log(std::ostream& out, std::span<const BroadcastEvent> events);
void write_app_log(std::ostream& out, std::span<const AppSample> samples);
void write_sensor_log(std::ostream& out, SensorGroup group, int width,
                      std::span<const SensorSample> samples);

struct TraceInputs {
  std::vector<BatteryEntry> battery;
  std::vector<ScreenEvent> screen;
  std::vector<BroadcastEvent> broadcast;
  std::vector<AppSample> app;
  std::vector<SensorSample> t1;
  std::vector<SensorSample> t2;
};

/// All streams of one user, each stably sorted by timestamp.
struct UserTrace {
  std::string user_id;
  std::vector<BatteryEntry> battery;
  std::vector<ScreenEvent> screen;
  std::vector<BroadcastEvent> broadcast;
  std::vector<AppSample> app;
  std::vector<SensorSample> t1;
  std::vector<SensorSample> t2;
};

/// Records of a time-sorted stream with a <= timestamp <= b.
template <typename T>
std::span<const T> in_range(const std::vector<T>& stream, Timestamp a, Timestamp b) {
  if (b < a) return {};
  const auto lo = std::lower_bound(stream.begin(), stream.end(), a,
                                   [](const T& r, Timestamp t) { return r.timestamp < t; });
  const auto hi = std::upper_bound(lo, stream.end(), b,
                                   [](Timestamp t, const T& r) { return t < r.timestamp; });
  return {lo, hi};
}

/// Last record with timestamp <= t, or nullptr.
template <typename T>
const T* last_at_or_before(const std::vector<T>& stream, Timestamp t) {
  const auto it = std::upper_bound(stream.begin(), stream.end(), t,
                                   [](Timestamp x, const T& r) { return x < r.timestamp; });
  return it == stream.begin() ? nullptr : &*(it - 1);
}

/// Partitions records by user, stably sorts each stream, drops exact duplicate
/// records and collapses repeated screen actions to the first occurrence.
std::map<std::string, UserTrace> build_user_trace(TraceInputs inputs);

/// File names used for a telemetry directory.
struct LogFiles {
  static constexpr const char* battery = "battery.csv";
  static constexpr const char* screen = "screen.csv";
  static constexpr const char* broadcast = "broadcast.csv";
  static constexpr const char* app = "app.csv";
  static constexpr const char* t1 = "t1.csv";
  static constexpr const char* t2 = "t2.csv";
};

struct DirectoryReport {
  ParseReport battery, screen, broadcast, app, t1, t2;
};

/// Parses every log in `dir` (each may carry a ".gz" suffix; absent optional
/// streams are treated as empty, the battery log is required).
TraceInputs read_trace_directory(const std::filesystem::path& dir, const ParseOptions& opts = {},
                                 DirectoryReport* report = nullptr);

}  // namespace blife
