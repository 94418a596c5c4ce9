#include "blife/ingest.hpp"

#include <cctype>
#include <fstream>
#include <optional>
#include <set>

namespace blife {

const char* to_string(LineErrorKind kind) {
  switch (kind) {
    case LineErrorKind::FieldCount: return "FieldCount";
    case LineErrorKind::BadTimestamp: return "BadTimestamp";
    case LineErrorKind::BadLevel: return "BadLevel";
    case LineErrorKind::BadState: return "BadState";
    case LineErrorKind::BadValue: return "BadValue";
    case LineErrorKind::WidthMismatch: return "WidthMismatch";
  }
  return "?";
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool skippable(std::string_view line) {
  const auto first = line.find_first_not_of(" \t");
  return first == std::string_view::npos || line[first] == '#';
}

// Runs the common line loop: header check, comment skipping, error
// bookkeeping and the error-rate cap. `row` returns an error kind or nothing.
template <typename HeaderCheck, typename Row>
ParseReport drive(LineSource& in, const ParseOptions& opts, HeaderCheck&& header_ok, Row&& row) {
  ParseReport report;
  std::string line;
  std::vector<std::string_view> fields;
  std::size_t lineno = 0;
  bool have_header = false;
  while (in.next(line)) {
    ++lineno;
    if (skippable(line)) continue;
    split_fields(line, fields);
    if (!have_header) {
      header_ok(fields);  // throws on mismatch
      have_header = true;
      continue;
    }
    ++report.data_lines;
    if (auto err = row(fields, report)) {
      ++report.error_count;
      if (report.errors.size() < opts.max_reported_errors)
        report.errors.push_back({lineno, *err, line});
    } else {
      ++report.records;
    }
  }
  if (!have_header) throw IngestError(IngestError::Kind::MissingHeader, "missing header line");
  if (report.data_lines > 0 &&
      static_cast<double>(report.error_count) >
          opts.max_error_rate * static_cast<double>(report.data_lines)) {
    throw IngestError(IngestError::Kind::ErrorRateExceeded,
                      std::to_string(report.error_count) + " malformed lines out of " +
                          std::to_string(report.data_lines));
  }
  return report;
}

auto fixed_header(std::initializer_list<std::string_view> names) {
  std::vector<std::string> expected(names.begin(), names.end());
  return [expected](const std::vector<std::string_view>& fields) {
    bool ok = fields.size() == expected.size();
    for (std::size_t i = 0; ok && i < fields.size(); ++i) ok = trim(fields[i]) == expected[i];
    if (!ok) {
      std::string want;
      for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
      throw IngestError(IngestError::Kind::MissingHeader, "expected header `" + want + "`");
    }
  };
}

std::optional<Timestamp> parse_timestamp(std::string_view s) {
  auto v = parse_int(s);
  if (!v || *v <= 0) return std::nullopt;
  return v;
}

std::optional<ChargeState> parse_charge_state(std::string_view s) {
  const auto v = lower(s);
  if (v == "discharge" || v == "discharging") return ChargeState::Discharge;
  if (v == "charge" || v == "charging" || v == "full") return ChargeState::Charge;
  return std::nullopt;
}

const char* charge_name(ChargeState s) {
  return s == ChargeState::Charge ? "charge" : "discharge";
}

}  // namespace

ParseReport parse_battery_log(LineSource& in, const Sink<BatteryEntry>& sink,
                              const ParseOptions& opts) {
  return drive(in, opts, fixed_header({"user_id", "timestamp", "charge_state", "level"}),
               [&](const std::vector<std::string_view>& f,
                   ParseReport&) -> std::optional<LineErrorKind> {
                 if (f.size() != 4) return LineErrorKind::FieldCount;
                 const auto ts = parse_timestamp(f[1]);
                 if (!ts) return LineErrorKind::BadTimestamp;
                 const auto state = parse_charge_state(f[2]);
                 if (!state) return LineErrorKind::BadState;
                 const auto level = parse_int(f[3]);
                 if (!level || *level < 0 || *level > 100) return LineErrorKind::BadLevel;
                 if (f[0].empty()) return LineErrorKind::BadValue;
                 sink(BatteryEntry{std::string(f[0]), *ts, *state, static_cast<int>(*level)});
                 return std::nullopt;
               });
}

ParseReport parse_screen_log(LineSource& in, const Sink<ScreenEvent>& sink,
                             const ParseOptions& opts) {
  return drive(in, opts, fixed_header({"user_id", "timestamp", "action"}),
               [&](const std::vector<std::string_view>& f,
                   ParseReport&) -> std::optional<LineErrorKind> {
                 if (f.size() != 3) return LineErrorKind::FieldCount;
                 const auto ts = parse_timestamp(f[1]);
                 if (!ts) return LineErrorKind::BadTimestamp;
                 const auto a = lower(f[2]);
                 ScreenAction action;
                 if (a == "on") action = ScreenAction::On;
                 else if (a == "off") action = ScreenAction::Off;
                 else return LineErrorKind::BadState;
                 if (f[0].empty()) return LineErrorKind::BadValue;
                 sink(ScreenEvent{std::string(f[0]), *ts, action});
                 return std::nullopt;
               });
}

ParseReport parse_broadcast_log(LineSource& in, const Sink<BroadcastEvent>& sink,
                                const ParseOptions& opts) {
  return drive(in, opts, fixed_header({"user_id", "timestamp", "broadcast_type"}),
               [&](const std::vector<std::string_view>& f,
                   ParseReport& report) -> std::optional<LineErrorKind> {
                 if (f.size() != 3) return LineErrorKind::FieldCount;
                 const auto ts = parse_timestamp(f[1]);
                 if (!ts) return LineErrorKind::BadTimestamp;
                 const auto type = parse_int(f[2]);
                 if (!type) return LineErrorKind::BadValue;
                 if (f[0].empty()) return LineErrorKind::BadValue;
                 int id = static_cast<int>(*type);
                 if (*type < 0 || *type >= opts.n_broadcast_types) {
                   id = kOtherBroadcast;
                   ++report.other_broadcasts;
                 }
                 sink(BroadcastEvent{std::string(f[0]), *ts, id});
                 return std::nullopt;
               });
}

ParseReport parse_app_log(LineSource& in, const Sink<AppSample>& sink, const ParseOptions& opts) {
  return drive(in, opts, fixed_header({"user_id", "timestamp", "app_id", "state"}),
               [&](const std::vector<std::string_view>& f,
                   ParseReport&) -> std::optional<LineErrorKind> {
                 if (f.size() != 4) return LineErrorKind::FieldCount;
                 const auto ts = parse_timestamp(f[1]);
                 if (!ts) return LineErrorKind::BadTimestamp;
                 const auto s = lower(f[3]);
                 AppState state;
                 if (s == "foreground") state = AppState::Foreground;
                 else if (s == "background") state = AppState::Background;
                 else return LineErrorKind::BadState;
                 if (f[0].empty() || f[2].empty()) return LineErrorKind::BadValue;
                 sink(AppSample{std::string(f[0]), *ts, std::string(f[2]), state});
                 return std::nullopt;
               });
}

ParseReport parse_sensor_log(LineSource& in, SensorGroup group, const Sink<SensorSample>& sink,
                             const ParseOptions& opts) {
  const int width = group == SensorGroup::T1 ? opts.t1_width : opts.t2_width;
  auto header = [width](const std::vector<std::string_view>& f) {
    if (f.size() < 2 || trim(f[0]) != "user_id" || trim(f[1]) != "timestamp")
      throw IngestError(IngestError::Kind::MissingHeader,
                        "expected header `user_id,timestamp,s1..sK`");
    for (std::size_t i = 2; i < f.size(); ++i) {
      if (trim(f[i]) != "s" + std::to_string(i - 1))
        throw IngestError(IngestError::Kind::MissingHeader,
                          "sensor column " + std::to_string(i - 1) + " misnamed");
    }
    if (static_cast<int>(f.size()) - 2 != width)
      throw IngestError(IngestError::Kind::WidthMismatch,
                        "sensor header has " + std::to_string(f.size() - 2) +
                            " columns, configured width is " + std::to_string(width));
  };
  return drive(in, opts, header,
               [&](const std::vector<std::string_view>& f,
                   ParseReport&) -> std::optional<LineErrorKind> {
                 if (f.size() < 2) return LineErrorKind::FieldCount;
                 if (static_cast<int>(f.size()) - 2 != width) return LineErrorKind::WidthMismatch;
                 const auto ts = parse_timestamp(f[1]);
                 if (!ts) return LineErrorKind::BadTimestamp;
                 if (f[0].empty()) return LineErrorKind::BadValue;
                 SensorSample s{std::string(f[0]), *ts, group, {}};
                 s.values.resize(static_cast<std::size_t>(width), kMissing);
                 for (int k = 0; k < width; ++k) {
                   const auto cell = f[static_cast<std::size_t>(k) + 2];
                   if (cell.empty()) continue;
                   const auto v = parse_double(cell);
                   if (!v || !std::isfinite(*v)) return LineErrorKind::BadValue;
                   s.values[static_cast<std::size_t>(k)] = *v;
                 }
                 sink(std::move(s));
                 return std::nullopt;
               });
}

void write_battery_log(std::ostream& out, std::span<const BatteryEntry> entries) {
  out << "user_id,timestamp,charge_state,level\n";
  for (const auto& e : entries)
    out << e.user_id << ',' << e.timestamp << ',' << charge_name(e.state) << ',' << e.level
        << '\n';
}

void write_screen_log(std::ostream& out, std::span<const ScreenEvent> events) {
  out << "user_id,timestamp,action\n";
  for (const auto& e : events)
    out << e.user_id << ',' << e.timestamp << ','
        << (e.action == ScreenAction::On ? "on" : "off") << '\n';
}

void write_broadcast_log(std::ostream& out, std::span<const BroadcastEvent> events) {
  out << "user_id,timestamp,broadcast_type\n";
  for (const auto& e : events)
    out << e.user_id << ',' << e.timestamp << ',' << e.broadcast_type << '\n';
}

void write_app_log(std::ostream& out, std::span<const AppSample> samples) {
  out << "user_id,timestamp,app_id,state\n";
  for (const auto& s : samples)
    out << s.user_id << ',' << s.timestamp << ',' << s.app_id << ','
        << (s.state == AppState::Foreground ? "foreground" : "background") << '\n';
}

void write_sensor_log(std::ostream& out, SensorGroup, int width,
                      std::span<const SensorSample> samples) {
  out << "user_id,timestamp";
  for (int k = 1; k <= width; ++k) out << ",s" << k;
  out << '\n';
  for (const auto& s : samples) {
    out << s.user_id << ',' << s.timestamp;
    for (double v : s.values) {
      out << ',';
      if (!is_missing(v)) out << format_double(v);
    }
    out << '\n';
  }
}

namespace {

template <typename T>
void sort_and_dedup(std::vector<T>& stream) {
  std::stable_sort(stream.begin(), stream.end(),
                   [](const T& a, const T& b) { return a.timestamp < b.timestamp; });
  std::vector<T> out;
  out.reserve(stream.size());
  std::size_t run_start = 0;  // index in `out` where the current timestamp run begins
  for (auto& r : stream) {
    if (out.empty() || out.back().timestamp != r.timestamp) run_start = out.size();
    const bool dup = std::any_of(out.begin() + static_cast<std::ptrdiff_t>(run_start), out.end(),
                                 [&](const T& o) { return o == r; });
    if (!dup) out.push_back(std::move(r));
  }
  stream = std::move(out);
}

template <typename T>
void distribute(std::vector<T>& src, std::map<std::string, UserTrace>& traces,
                std::vector<T> UserTrace::*member) {
  for (auto& r : src) {
    auto& trace = traces[r.user_id];
    trace.user_id = r.user_id;
    (trace.*member).push_back(std::move(r));
  }
  src.clear();
}

}  // namespace

std::map<std::string, UserTrace> build_user_trace(TraceInputs inputs) {
  std::map<std::string, UserTrace> traces;
  distribute(inputs.battery, traces, &UserTrace::battery);
  distribute(inputs.screen, traces, &UserTrace::screen);
  distribute(inputs.broadcast, traces, &UserTrace::broadcast);
  distribute(inputs.app, traces, &UserTrace::app);
  distribute(inputs.t1, traces, &UserTrace::t1);
  distribute(inputs.t2, traces, &UserTrace::t2);
  for (auto& [user, t] : traces) {
    sort_and_dedup(t.battery);
    sort_and_dedup(t.screen);
    sort_and_dedup(t.broadcast);
    sort_and_dedup(t.app);
    sort_and_dedup(t.t1);
    sort_and_dedup(t.t2);
    std::vector<ScreenEvent> collapsed;
    collapsed.reserve(t.screen.size());
    for (auto& e : t.screen)
      if (collapsed.empty() || collapsed.back().action != e.action) collapsed.push_back(std::move(e));
    t.screen = std::move(collapsed);
  }
  return traces;
}

namespace {

std::optional<std::filesystem::path> find_log(const std::filesystem::path& dir, const char* name) {
  const auto plain = dir / name;
  if (std::filesystem::exists(plain)) return plain;
  auto gz = plain;
  gz += ".gz";
  if (std::filesystem::exists(gz)) return gz;
  return std::nullopt;
}

template <typename T, typename Parse>
void read_optional(const std::filesystem::path& dir, const char* name, std::vector<T>& out,
                   ParseReport& report, Parse&& parse) {
  const auto path = find_log(dir, name);
  if (!path) return;
  auto src = open_lines(*path);
  report = parse(*src, [&](T&& v) { out.push_back(std::move(v)); });
}

}  // namespace

TraceInputs read_trace_directory(const std::filesystem::path& dir, const ParseOptions& opts,
                                 DirectoryReport* report) {
  TraceInputs in;
  DirectoryReport local;
  if (!find_log(dir, LogFiles::battery))
    throw std::runtime_error("no battery log in " + dir.string());
  read_optional(dir, LogFiles::battery, in.battery, local.battery,
                [&](LineSource& s, const Sink<BatteryEntry>& k) {
                  return parse_battery_log(s, k, opts);
                });
  read_optional(dir, LogFiles::screen, in.screen, local.screen,
                [&](LineSource& s, const Sink<ScreenEvent>& k) {
                  return parse_screen_log(s, k, opts);
                });
  read_optional(dir, LogFiles::broadcast, in.broadcast, local.broadcast,
                [&](LineSource& s, const Sink<BroadcastEvent>& k) {
                  return parse_broadcast_log(s, k, opts);
                });
  read_optional(dir, LogFiles::app, in.app, local.app,
                [&](LineSource& s, const Sink<AppSample>& k) { return parse_app_log(s, k, opts); });
  read_optional(dir, LogFiles::t1, in.t1, local.t1,
                [&](LineSource& s, const Sink<SensorSample>& k) {
                  return parse_sensor_log(s, SensorGroup::T1, k, opts);
                });
  read_optional(dir, LogFiles::t2, in.t2, local.t2,
                [&](LineSource& s, const Sink<SensorSample>& k) {
                  return parse_sensor_log(s, SensorGroup::T2, k, opts);
                });
  if (report != nullptr) *report = std::move(local);
  return in;
}

}  // namespace blife
