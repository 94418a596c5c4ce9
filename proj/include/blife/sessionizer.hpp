#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "blife/ingest.hpp"

namespace blife {

struct SegmentationConfig {
  Timestamp gap_threshold = 600;  // seconds
  Timestamp min_duration = 3600;  // seconds
  int min_start_battery = 30;     // percent
  int threshold_L = 20;           // percent

  /// Throws std::invalid_argument unless every field is positive and
  /// min_start_battery > threshold_L.
  void validate() const;
};

/// One contiguous discharge interval.
struct Session {
  std::string user_id;
  Timestamp t_start = 0;
  Timestamp t_end = 0;
  int b_start = 0;
  int b_end = 0;
  std::vector<BatteryEntry> entries;

  Timestamp duration() const { return t_end - t_start; }
  /// Stable identifier "<user>@<t_start>"; unique because a user's sessions are disjoint.
  std::string id() const { return user_id + "@" + std::to_string(t_start); }
};

struct SessionLabel {
  bool observed = false;
  Timestamp t_event = 0;  // meaningful only when observed
  int threshold_L = 20;
};

/// Splits the discharge entries of a sorted battery stream into sessions.
/// A new session begins when the gap to the previous discharge entry exceeds
/// cfg.gap_threshold or when the level rises.
std::vector<Session> segment_sessions(std::span<const BatteryEntry> battery,
                                      const SegmentationConfig& cfg);
inline std::vector<Session> segment_sessions(const UserTrace& trace,
                                             const SegmentationConfig& cfg) {
  return segment_sessions(std::span<const BatteryEntry>(trace.battery), cfg);
}

struct FilterStages {
  bool duration = true;
  bool start_battery = true;
};

struct FilterCounts {
  std::size_t input = 0;
  std::size_t after_duration = 0;
  std::size_t after_start_battery = 0;
};

std::vector<Session> filter_sessions(std::vector<Session> sessions, const SegmentationConfig& cfg,
                                     FilterStages stages = {}, FilterCounts* counts = nullptr);

/// Observed at the first entry whose level is <= L, otherwise censored.
SessionLabel label_session(const Session& session, const SegmentationConfig& cfg);

class OutOfRange : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Right-continuous step function b(t) over [t_start, t_end].
int battery_at(const Session& session, Timestamp t);

struct CdfTable {
  std::vector<std::pair<double, double>> points;  // (value, cumulative fraction)

  /// Fraction of samples <= x.
  double at(double x) const;
};

CdfTable empirical_cdf(std::vector<double> values);

struct SessionCdfs {
  CdfTable duration;  // hours
  CdfTable begin_level;
  CdfTable end_level;
  CdfTable consumption;
};

/// Throws std::invalid_argument on an empty session list.
SessionCdfs empirical_cdfs(std::span<const Session> sessions);

void write_sessions_csv(std::ostream& out, std::span<const Session> sessions,
                        std::span<const SessionLabel> labels);

struct SessionRow {
  std::string user_id;
  Timestamp t_start = 0, t_end = 0;
  int b_start = 0, b_end = 0;
  bool observed = false;
  std::optional<Timestamp> t_event;
  friend bool operator==(const SessionRow&, const SessionRow&) = default;
};

std::vector<SessionRow> read_sessions_csv(LineSource& in);

void write_cdf_csv(std::ostream& out, const CdfTable& cdf, const char* value_name);

}  // namespace blife
