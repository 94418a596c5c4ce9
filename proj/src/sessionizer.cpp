#include "blife/sessionizer.hpp"

#include <algorithm>

namespace blife {

void SegmentationConfig::validate() const {
  if (gap_threshold <= 0 || min_duration <= 0 || min_start_battery <= 0 || threshold_L <= 0)
    throw std::invalid_argument("segmentation parameters must be positive");
  if (min_start_battery <= threshold_L)
    throw std::invalid_argument("min_start_battery must exceed threshold_L");
}

std::vector<Session> segment_sessions(std::span<const BatteryEntry> battery,
                                      const SegmentationConfig& cfg) {
  std::vector<Session> sessions;
  const BatteryEntry* prev = nullptr;
  for (const auto& e : battery) {
    if (e.state != ChargeState::Discharge) continue;
    const bool split = prev == nullptr || e.timestamp - prev->timestamp > cfg.gap_threshold ||
                       e.level > prev->level;
    if (split) {
      Session s;
      s.user_id = e.user_id;
      s.t_start = e.timestamp;
      s.b_start = e.level;
      sessions.push_back(std::move(s));
    }
    auto& cur = sessions.back();
    cur.entries.push_back(e);
    cur.t_end = e.timestamp;
    cur.b_end = e.level;
    prev = &e;
  }
  return sessions;
}

std::vector<Session> filter_sessions(std::vector<Session> sessions, const SegmentationConfig& cfg,
                                     FilterStages stages, FilterCounts* counts) {
  FilterCounts c;
  c.input = sessions.size();
  if (stages.duration)
    std::erase_if(sessions, [&](const Session& s) { return s.duration() < cfg.min_duration; });
  c.after_duration = sessions.size();
  if (stages.start_battery)
    std::erase_if(sessions, [&](const Session& s) { return s.b_start < cfg.min_start_battery; });
  c.after_start_battery = sessions.size();
  if (counts != nullptr) *counts = c;
  return sessions;
}

SessionLabel label_session(const Session& session, const SegmentationConfig& cfg) {
  SessionLabel label;
  label.threshold_L = cfg.threshold_L;
  for (const auto& e : session.entries) {
    if (e.level <= cfg.threshold_L) {
      label.observed = true;
      label.t_event = e.timestamp;
      break;
    }
  }
  return label;
}

int battery_at(const Session& session, Timestamp t) {
  if (t < session.t_start || t > session.t_end || session.entries.empty())
    throw OutOfRange("time " + std::to_string(t) + " outside session " + session.id());
  const auto* e = last_at_or_before(session.entries, t);
  return e->level;
}

double CdfTable::at(double x) const {
  const auto it = std::upper_bound(points.begin(), points.end(), x,
                                   [](double v, const auto& p) { return v < p.first; });
  return it == points.begin() ? 0.0 : (it - 1)->second;
}

CdfTable empirical_cdf(std::vector<double> values) {
  CdfTable cdf;
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
    cdf.points.emplace_back(values[i], static_cast<double>(i + 1) / n);
  }
  return cdf;
}

SessionCdfs empirical_cdfs(std::span<const Session> sessions) {
  if (sessions.empty()) throw std::invalid_argument("empirical_cdfs: empty session list");
  std::vector<double> duration, begin, end, consumption;
  for (const auto& s : sessions) {
    duration.push_back(static_cast<double>(s.duration()) / 3600.0);
    begin.push_back(s.b_start);
    end.push_back(s.b_end);
    consumption.push_back(s.b_start - s.b_end);
  }
  return {empirical_cdf(std::move(duration)), empirical_cdf(std::move(begin)),
          empirical_cdf(std::move(end)), empirical_cdf(std::move(consumption))};
}

void write_sessions_csv(std::ostream& out, std::span<const Session> sessions,
                        std::span<const SessionLabel> labels) {
  if (sessions.size() != labels.size())
    throw std::invalid_argument("write_sessions_csv: label count mismatch");
  out << "user_id,t_start,t_end,b_start,b_end,label,t_event\n";
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& s = sessions[i];
    out << s.user_id << ',' << s.t_start << ',' << s.t_end << ',' << s.b_start << ',' << s.b_end
        << ',' << (labels[i].observed ? "observed" : "censored") << ',';
    if (labels[i].observed) out << labels[i].t_event;
    out << '\n';
  }
}

std::vector<SessionRow> read_sessions_csv(LineSource& in) {
  std::vector<SessionRow> rows;
  std::string line;
  std::vector<std::string_view> f;
  bool header = false;
  while (in.next(line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "user_id,t_start,t_end,b_start,b_end,label,t_event")
        throw std::runtime_error("sessions file: bad header");
      header = true;
      continue;
    }
    split_fields(line, f);
    if (f.size() != 7) throw std::runtime_error("sessions file: bad row `" + line + "`");
    SessionRow r;
    r.user_id = std::string(f[0]);
    auto need = [&](std::string_view s) {
      auto v = parse_int(s);
      if (!v) throw std::runtime_error("sessions file: bad number in `" + line + "`");
      return *v;
    };
    r.t_start = need(f[1]);
    r.t_end = need(f[2]);
    r.b_start = static_cast<int>(need(f[3]));
    r.b_end = static_cast<int>(need(f[4]));
    r.observed = f[5] == "observed";
    if (r.observed) r.t_event = need(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_cdf_csv(std::ostream& out, const CdfTable& cdf, const char* value_name) {
  out << value_name << ",cdf\n";
  for (const auto& [v, p] : cdf.points) out << format_double(v) << ',' << format_double(p) << '\n';
}

}  // namespace blife
