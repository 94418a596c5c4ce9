#include "blife/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>

namespace blife {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::array<int, 5> kT1WindowsMin = {1, 5, 10, 30, 60};
constexpr std::array<int, 4> kAppWindowsMin = {5, 10, 30, 60};
constexpr int kT2WindowMin = 5;
constexpr int kRecentPercents = 10;
constexpr std::array<const char*, 21> kGroupNames = {
    "current_battery", "current_hour",   "current_weekday", "sensor_T2_last", "start_battery",
    "start_hour",      "start_weekday",  "age",             "consumption",    "history_rate",
    "naive_surv",      "past_rate",      "sensor_T1",       "sensor_T2_5min", "app_occurrence",
    "app_usage",       "screen",         "broadcast",       "user_index",     "session_history",
    "screen_history"};
constexpr std::array<const char*, 4> kHistoryFilters = {"anytime", "hour", "weekday",
                                                        "hour_weekday"};

const char* state_name(int s) { return s == 0 ? "fg" : "bg"; }

std::vector<std::string> make_column_names(const FeatureConfig& c) {
  std::vector<std::string> names;
  auto add = [&](int g, const std::string& suffix) {
    names.push_back("F" + std::to_string(g) + "." + kGroupNames[static_cast<std::size_t>(g - 1)] +
                    (suffix.empty() ? "" : "_" + suffix));
  };
  auto n = [](int i) { return std::to_string(i); };
  add(1, "");
  for (int h = 0; h < 24; ++h) add(2, n(h));
  for (int d = 0; d < 7; ++d) add(3, n(d));
  for (int k = 1; k <= c.t2_width; ++k) add(4, "s" + n(k));
  add(5, "");
  for (int h = 0; h < 24; ++h) add(6, n(h));
  for (int d = 0; d < 7; ++d) add(7, n(d));
  add(8, "minutes");
  add(9, "percent");
  add(10, "pct_per_min");
  add(11, "minutes");
  for (int p = 1; p <= kRecentPercents; ++p) add(12, "recent_" + n(p) + "pct");
  add(12, "dwell");
  for (int w : kT1WindowsMin)
    for (int k = 1; k <= c.t1_width; ++k) add(13, n(w) + "min_s" + n(k));
  for (int k = 1; k <= c.t2_width; ++k) add(14, "s" + n(k));
  for (int w : kAppWindowsMin)
    for (int a = 0; a < c.top_k_apps; ++a)
      for (int s = 0; s < 2; ++s) add(15, n(w) + "min_app" + n(a) + "_" + state_name(s));
  for (int a = 0; a < c.top_k_apps; ++a)
    for (int s = 0; s < 2; ++s) add(16, "app" + n(a) + "_" + state_name(s));
  add(17, "on_count");
  add(17, "on_fraction");
  for (int b = 0; b < c.n_broadcast_types; ++b) add(18, n(b));
  for (int u = 0; u < c.n_users; ++u) add(19, n(u));
  for (int g : {20, 21})
    for (const char* f : kHistoryFilters) {
      add(g, std::string(f) + "_mean");
      add(g, std::string(f) + "_median");
    }
  return names;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const auto m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Neumaier-compensated sum in a fixed order.
struct CompensatedSum {
  double sum = 0.0, comp = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) comp += (sum - t) + x;
    else comp += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

// Mean of each slot over sensor samples, ignoring missing slots.
void window_means(std::span<const SensorSample> samples, int width,
                  Eigen::Ref<Eigen::VectorXd> out) {
  for (int k = 0; k < width; ++k) {
    CompensatedSum s;
    int count = 0;
    for (const auto& sample : samples) {
      const double v = sample.values[static_cast<std::size_t>(k)];
      if (is_missing(v)) continue;
      s.add(v);
      ++count;
    }
    out[k] = count > 0 ? s.value() / count : kNaN;
  }
}

std::vector<const BatteryEntry*> discharge_window(const UserTrace& trace, Timestamp a,
                                                  Timestamp b) {
  std::vector<const BatteryEntry*> w;
  for (const auto& e : in_range(trace.battery, a, b))
    if (e.state == ChargeState::Discharge) w.push_back(&e);
  return w;
}

}  // namespace

std::vector<int> group_widths(const FeatureConfig& c) {
  return {1,
          24,
          7,
          c.t2_width,
          1,
          24,
          7,
          1,
          1,
          1,
          1,
          kRecentPercents + 1,
          static_cast<int>(kT1WindowsMin.size()) * c.t1_width,
          c.t2_width,
          static_cast<int>(kAppWindowsMin.size()) * c.top_k_apps * 2,
          c.top_k_apps * 2,
          2,
          c.n_broadcast_types,
          c.n_users,
          8,
          8};
}

FeatureSchema::FeatureSchema(FeatureConfig config, std::vector<std::string> top_apps,
                             std::vector<std::string> users)
    : config_(config), top_apps_(std::move(top_apps)), users_(std::move(users)) {
  if (config_.top_k_apps < 1 || config_.n_broadcast_types < 1 || config_.t1_width < 1 ||
      config_.t2_width < 1 || config_.n_users < 1)
    throw std::invalid_argument("feature config widths must be positive");
  top_apps_.resize(static_cast<std::size_t>(config_.top_k_apps));
  if (static_cast<int>(users_.size()) > config_.n_users)
    throw std::invalid_argument("more users (" + std::to_string(users_.size()) +
                                ") than the configured F19 width (" +
                                std::to_string(config_.n_users) + ")");
  const auto widths = group_widths(config_);
  int offset = 0;
  for (int g = 1; g <= kNumGroups; ++g) {
    const int w = widths[static_cast<std::size_t>(g - 1)];
    groups_.push_back({g, kGroupNames[static_cast<std::size_t>(g - 1)], offset, w});
    offset += w;
  }
  columns_ = make_column_names(config_);
  for (std::size_t i = 0; i < users_.size(); ++i) user_index_[users_[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < top_apps_.size(); ++i)
    if (!top_apps_[i].empty()) app_rank_[top_apps_[i]] = static_cast<int>(i);
}

int FeatureSchema::user_index(const std::string& user) const {
  const auto it = user_index_.find(user);
  return it == user_index_.end() ? -1 : it->second;
}

int FeatureSchema::app_rank(const std::string& app) const {
  const auto it = app_rank_.find(app);
  return it == app_rank_.end() ? -1 : it->second;
}

std::vector<int> FeatureSchema::columns(std::span<const int> group_ids) const {
  std::vector<bool> chosen(kNumGroups + 1, false);
  for (int g : group_ids) {
    if (g < 1 || g > kNumGroups) throw std::invalid_argument("bad group id F" + std::to_string(g));
    chosen[static_cast<std::size_t>(g)] = true;
  }
  std::vector<int> cols;
  for (const auto& layout : groups_)
    if (chosen[static_cast<std::size_t>(layout.group)])
      for (int i = 0; i < layout.width; ++i) cols.push_back(layout.offset + i);
  return cols;
}

std::uint64_t FeatureSchema::fingerprint() const {
  std::uint64_t h = fnv1a64("blife-schema-" + std::to_string(kVersion));
  for (const auto& c : columns_) h = fnv1a64(c + "\n", h);
  for (const auto& a : top_apps_) h = fnv1a64("app:" + a + "\n", h);
  for (const auto& u : users_) h = fnv1a64("user:" + u + "\n", h);
  return h;
}

void FeatureSchema::write(std::ostream& out) const {
  out << "blife-schema " << kVersion << '\n'
      << "top_k_apps " << config_.top_k_apps << '\n'
      << "n_broadcast_types " << config_.n_broadcast_types << '\n'
      << "t1_width " << config_.t1_width << '\n'
      << "t2_width " << config_.t2_width << '\n'
      << "n_users " << config_.n_users << '\n'
      << "utc_offset " << config_.utc_offset << '\n';
  for (std::size_t i = 0; i < top_apps_.size(); ++i) out << "app " << i << ' ' << top_apps_[i] << '\n';
  for (std::size_t i = 0; i < users_.size(); ++i) out << "user " << i << ' ' << users_[i] << '\n';
  out << "width " << width() << '\n';
}

FeatureSchema FeatureSchema::read(LineSource& in) {
  std::string line;
  if (!in.next(line) || line != "blife-schema " + std::to_string(kVersion))
    throw std::runtime_error("schema manifest: unsupported version line");
  FeatureConfig c;
  std::vector<std::string> apps, users;
  int declared_width = -1;
  while (in.next(line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    auto num = [&](const std::string& s) {
      auto v = parse_int(s);
      if (!v) throw std::runtime_error("schema manifest: bad line `" + line + "`");
      return *v;
    };
    if (key == "app" || key == "user") {
      const auto sp2 = rest.find(' ');
      const std::string name = sp2 == std::string::npos ? "" : rest.substr(sp2 + 1);
      (key == "app" ? apps : users).push_back(name);
    } else if (key == "top_k_apps") c.top_k_apps = static_cast<int>(num(rest));
    else if (key == "n_broadcast_types") c.n_broadcast_types = static_cast<int>(num(rest));
    else if (key == "t1_width") c.t1_width = static_cast<int>(num(rest));
    else if (key == "t2_width") c.t2_width = static_cast<int>(num(rest));
    else if (key == "n_users") c.n_users = static_cast<int>(num(rest));
    else if (key == "utc_offset") c.utc_offset = num(rest);
    else if (key == "width") declared_width = static_cast<int>(num(rest));
    else throw std::runtime_error("schema manifest: unknown key `" + key + "`");
  }
  FeatureSchema schema(c, std::move(apps), std::move(users));
  if (declared_width != schema.width())
    throw std::runtime_error("schema manifest: width does not match layout");
  return schema;
}

FeatureSchema build_schema(const FeatureConfig& config,
                           const std::map<std::string, UserTrace>& traces,
                           std::span<const QueryInstance> training_queries,
                           std::vector<std::string>* warnings) {
  std::map<std::string, std::size_t> counts;
  for (const auto& q : training_queries) {
    const auto it = traces.find(q.user_id);
    if (it == traces.end()) continue;
    for (const auto& s : in_range(it->second.app, q.t_start, q.t_query)) ++counts[s.app_id];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // map order is lexicographic, so a stable sort by count keeps the tie-break
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> top;
  for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < config.top_k_apps; ++i)
    top.push_back(ranked[i].first);
  if (static_cast<int>(top.size()) < config.top_k_apps && warnings != nullptr)
    warnings->push_back("InsufficientApps: " + std::to_string(top.size()) +
                        " distinct apps in training data, " + std::to_string(config.top_k_apps) +
                        " requested");
  std::vector<std::string> users;
  for (const auto& [u, t] : traces) users.push_back(u);
  return FeatureSchema(config, std::move(top), std::move(users));
}

int local_hour(Timestamp t, Timestamp utc_offset) {
  const Timestamp local = t + utc_offset;
  const Timestamp sec_of_day = ((local % 86400) + 86400) % 86400;
  return static_cast<int>(sec_of_day / 3600);
}

int local_weekday(Timestamp t, Timestamp utc_offset) {
  const Timestamp local = t + utc_offset;
  Timestamp day = local / 86400;
  if (local < 0 && local % 86400 != 0) --day;
  // 1970-01-01 was a Thursday (index 3 with Monday = 0)
  return static_cast<int>(((day + 3) % 7 + 7) % 7);
}

double screen_on_seconds(const UserTrace& trace, Timestamp a, Timestamp b) {
  if (b <= a) return 0.0;
  const auto* before = last_at_or_before(trace.screen, a);
  bool on = before != nullptr && before->action == ScreenAction::On;
  Timestamp cursor = a;
  double total = 0.0;
  for (const auto& e : in_range(trace.screen, a + 1, b)) {
    if (on) total += static_cast<double>(e.timestamp - cursor);
    cursor = e.timestamp;
    on = e.action == ScreenAction::On;
  }
  if (on) total += static_cast<double>(b - cursor);
  return total;
}

UserHistoryIndex UserHistoryIndex::build(std::span<const Session> sessions,
                                         const std::map<std::string, UserTrace>& traces,
                                         Timestamp utc_offset) {
  UserHistoryIndex index;
  for (const auto& s : sessions) {
    SessionSummary sum;
    sum.t_start = s.t_start;
    sum.t_end = s.t_end;
    sum.start_hour = local_hour(s.t_start, utc_offset);
    sum.start_weekday = local_weekday(s.t_start, utc_offset);
    const double minutes = static_cast<double>(s.duration()) / 60.0;
    sum.rate = minutes > 0 ? (s.b_start - s.b_end) / minutes : 0.0;
    const auto it = traces.find(s.user_id);
    sum.screen_fraction =
        (it != traces.end() && s.duration() > 0)
            ? screen_on_seconds(it->second, s.t_start, s.t_end) / static_cast<double>(s.duration())
            : 0.0;
    index.add(s.user_id, sum);
  }
  return index;
}

void UserHistoryIndex::add(const std::string& user, SessionSummary summary) {
  auto& list = by_user_[user];
  const auto pos = std::upper_bound(
      list.begin(), list.end(), summary,
      [](const SessionSummary& a, const SessionSummary& b) { return a.t_end < b.t_end; });
  list.insert(pos, summary);
}

std::span<const SessionSummary> UserHistoryIndex::prior(const std::string& user,
                                                        Timestamp t_start) const {
  const auto it = by_user_.find(user);
  if (it == by_user_.end()) return {};
  const auto& list = it->second;
  const auto end = std::lower_bound(
      list.begin(), list.end(), t_start,
      [](const SessionSummary& s, Timestamp t) { return s.t_end < t; });
  return {list.begin(), end};
}

void extract_query_time_features(const FeatureSchema& schema, const QueryPoint& q,
                                 const UserTrace& trace, Eigen::Ref<Eigen::VectorXd> row) {
  const auto& cfg = schema.config();
  const auto window = discharge_window(trace, q.t_start, q.t_query);
  row[schema.group(1).offset] = window.empty() ? kNaN : window.back()->level;

  const auto& f2 = schema.group(2);
  row.segment(f2.offset, f2.width).setZero();
  row[f2.offset + local_hour(q.t_query, cfg.utc_offset)] = 1.0;
  const auto& f3 = schema.group(3);
  row.segment(f3.offset, f3.width).setZero();
  row[f3.offset + local_weekday(q.t_query, cfg.utc_offset)] = 1.0;

  const auto& f4 = schema.group(4);
  const auto* last = last_at_or_before(trace.t2, q.t_query);
  for (int k = 0; k < f4.width; ++k)
    row[f4.offset + k] = last != nullptr ? last->values[static_cast<std::size_t>(k)] : kNaN;
}

void extract_session_features(const FeatureSchema& schema, const QueryPoint& q,
                              const UserTrace& trace, Eigen::Ref<Eigen::VectorXd> row) {
  const auto& cfg = schema.config();
  const auto window = discharge_window(trace, q.t_start, q.t_query);
  const double current = window.empty() ? kNaN : window.back()->level;
  const double start = window.empty() ? kNaN : window.front()->level;

  row[schema.group(5).offset] = start;
  const auto& f6 = schema.group(6);
  row.segment(f6.offset, f6.width).setZero();
  row[f6.offset + local_hour(q.t_start, cfg.utc_offset)] = 1.0;
  const auto& f7 = schema.group(7);
  row.segment(f7.offset, f7.width).setZero();
  row[f7.offset + local_weekday(q.t_start, cfg.utc_offset)] = 1.0;

  const double age = static_cast<double>(q.t_query - q.t_start) / 60.0;
  const double consumed = start - current;
  double rate = kNaN;
  if (age > 0 && !std::isnan(consumed)) rate = consumed == 0 ? 0.0 : consumed / age;
  const double naive = (!std::isnan(rate) && rate > 0) ? current / rate : kNaN;
  row[schema.group(8).offset] = age;
  row[schema.group(9).offset] = consumed;
  row[schema.group(10).offset] = rate;
  row[schema.group(11).offset] = naive;

  // F12: minutes per percent over the most recent p percent, then dwell time.
  const auto& f12 = schema.group(12);
  for (int p = 1; p <= kRecentPercents; ++p) {
    double value = kNaN;
    if (!window.empty() && start - current >= p) {
      const int target = static_cast<int>(current) + p;
      const BatteryEntry* latest = nullptr;
      for (const auto* e : window)
        if (e->level >= target) latest = e;
      if (latest != nullptr)
        value = static_cast<double>(q.t_query - latest->timestamp) / 60.0 / p;
    }
    row[f12.offset + p - 1] = value;
  }
  double dwell = kNaN;
  for (const auto* e : window) {
    if (e->level <= current) {
      dwell = static_cast<double>(q.t_query - e->timestamp) / 60.0;
      break;
    }
  }
  row[f12.offset + kRecentPercents] = dwell;

  const auto& f13 = schema.group(13);
  for (std::size_t w = 0; w < kT1WindowsMin.size(); ++w) {
    const Timestamp from = std::max(q.t_start, q.t_query - kT1WindowsMin[w] * 60);
    window_means(in_range(trace.t1, from, q.t_query), cfg.t1_width,
                 row.segment(f13.offset + static_cast<int>(w) * cfg.t1_width, cfg.t1_width));
  }
  const auto& f14 = schema.group(14);
  window_means(in_range(trace.t2, std::max(q.t_start, q.t_query - kT2WindowMin * 60), q.t_query),
               cfg.t2_width, row.segment(f14.offset, f14.width));

  // F15: occurrence of (app, state) within each trailing window.
  const int K = cfg.top_k_apps;
  const auto& f15 = schema.group(15);
  row.segment(f15.offset, f15.width).setZero();
  const Timestamp widest = kAppWindowsMin.back() * 60;
  for (const auto& s : in_range(trace.app, q.t_query - widest, q.t_query)) {
    const int rank = schema.app_rank(s.app_id);
    if (rank < 0) continue;
    const int state = s.state == AppState::Foreground ? 0 : 1;
    for (std::size_t w = 0; w < kAppWindowsMin.size(); ++w)
      if (s.timestamp >= q.t_query - kAppWindowsMin[w] * 60)
        row[f15.offset + (static_cast<int>(w) * K + rank) * 2 + state] = 1.0;
  }

  // F16: each sample holds its app's state until the next sampling tick.
  const auto& f16 = schema.group(16);
  row.segment(f16.offset, f16.width).setZero();
  const auto apps = in_range(trace.app, q.t_start, q.t_query);
  const double elapsed = static_cast<double>(q.t_query - q.t_start);
  if (elapsed > 0) {
    std::size_t i = 0;
    while (i < apps.size()) {
      std::size_t j = i;
      while (j < apps.size() && apps[j].timestamp == apps[i].timestamp) ++j;
      const Timestamp until = j < apps.size() ? apps[j].timestamp : q.t_query;
      const double span = static_cast<double>(until - apps[i].timestamp);
      std::set<int> seen;
      for (std::size_t k = i; k < j; ++k) {
        const int rank = schema.app_rank(apps[k].app_id);
        if (rank < 0) continue;
        const int cell = rank * 2 + (apps[k].state == AppState::Foreground ? 0 : 1);
        if (seen.insert(cell).second) row[f16.offset + cell] += span / elapsed;
      }
      i = j;
    }
  }

  const auto& f17 = schema.group(17);
  double on_count = 0;
  for (const auto& e : in_range(trace.screen, q.t_start, q.t_query))
    if (e.action == ScreenAction::On) on_count += 1;
  row[f17.offset] = on_count;
  row[f17.offset + 1] =
      elapsed > 0 ? screen_on_seconds(trace, q.t_start, q.t_query) / elapsed : 0.0;

  const auto& f18 = schema.group(18);
  row.segment(f18.offset, f18.width).setZero();
  for (const auto& e : in_range(trace.broadcast, q.t_start, q.t_query))
    if (e.broadcast_type >= 0 && e.broadcast_type < cfg.n_broadcast_types)
      row[f18.offset + e.broadcast_type] += 1.0;
}

void extract_user_features(const FeatureSchema& schema, const QueryPoint& q,
                           const UserHistoryIndex& history, Eigen::Ref<Eigen::VectorXd> row) {
  const auto& cfg = schema.config();
  const auto& f19 = schema.group(19);
  row.segment(f19.offset, f19.width).setZero();
  const int idx = schema.user_index(q.user_id);
  if (idx >= 0) row[f19.offset + idx] = 1.0;

  const int hour = local_hour(q.t_start, cfg.utc_offset);
  const int weekday = local_weekday(q.t_start, cfg.utc_offset);
  const auto prior = history.prior(q.user_id, q.t_start);
  for (int g : {20, 21}) {
    const auto& layout = schema.group(g);
    for (int f = 0; f < 4; ++f) {
      std::vector<double> values;
      for (const auto& s : prior) {
        const bool hour_ok = (f == 1 || f == 3) ? s.start_hour == hour : true;
        const bool day_ok = (f == 2 || f == 3) ? s.start_weekday == weekday : true;
        if (hour_ok && day_ok) values.push_back(g == 20 ? s.rate : s.screen_fraction);
      }
      double mean = kNaN;
      if (!values.empty()) {
        CompensatedSum sum;
        for (double v : values) sum.add(v);
        mean = sum.value() / static_cast<double>(values.size());
      }
      row[layout.offset + 2 * f] = mean;
      row[layout.offset + 2 * f + 1] = median_of(std::move(values));
    }
  }
}

Eigen::VectorXd extract_features(const FeatureSchema& schema, const QueryPoint& q,
                                 const UserTrace& trace, const UserHistoryIndex& history) {
  Eigen::VectorXd row = Eigen::VectorXd::Constant(schema.width(), kNaN);
  extract_query_time_features(schema, q, trace, row);
  extract_session_features(schema, q, trace, row);
  extract_user_features(schema, q, history, row);
  return row;
}

Eigen::MatrixXd extract_feature_matrix(const FeatureSchema& schema,
                                       std::span<const QueryInstance> queries,
                                       const std::map<std::string, UserTrace>& traces,
                                       const UserHistoryIndex& history) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(queries.size()), schema.width());
  const UserTrace empty;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto it = traces.find(queries[i].user_id);
    const auto& trace = it == traces.end() ? empty : it->second;
    m.row(static_cast<Eigen::Index>(i)) =
        extract_features(schema, query_point(queries[i]), trace, history).transpose();
  }
  return m;
}

Preprocessor fit_preprocessor(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 2) throw std::invalid_argument("fit_preprocessor: TooFewRows");
  const auto n = rows.rows();
  const auto d = rows.cols();
  Preprocessor p;
  p.median.resize(d);
  p.mean.resize(d);
  p.scale.resize(d);
  p.pass_through.assign(static_cast<std::size_t>(d), false);
  std::vector<double> valid;
  for (Eigen::Index c = 0; c < d; ++c) {
    valid.clear();
    for (Eigen::Index r = 0; r < n; ++r)
      if (!std::isnan(rows(r, c))) valid.push_back(rows(r, c));
    if (valid.empty()) {
      p.median[c] = 0.0;
      p.mean[c] = 0.0;
      p.scale[c] = 1.0;
      p.pass_through[static_cast<std::size_t>(c)] = true;
      continue;
    }
    const double med = median_of(valid);
    p.median[c] = med;
    CompensatedSum sum;
    for (Eigen::Index r = 0; r < n; ++r) sum.add(std::isnan(rows(r, c)) ? med : rows(r, c));
    const double mean = sum.value() / static_cast<double>(n);
    CompensatedSum sq;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double x = (std::isnan(rows(r, c)) ? med : rows(r, c)) - mean;
      sq.add(x * x);
    }
    const double sd = std::sqrt(sq.value() / static_cast<double>(n));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      p.mean[c] = 0.0;
      p.scale[c] = 1.0;
      p.pass_through[static_cast<std::size_t>(c)] = true;
    } else {
      p.mean[c] = mean;
      p.scale[c] = sd;
    }
  }
  return p;
}

Eigen::VectorXd apply_preprocessor(const Preprocessor& pre, const Eigen::VectorXd& row) {
  if (row.size() != pre.width())
    throw SchemaMismatch("row width " + std::to_string(row.size()) + " != preprocessor width " +
                         std::to_string(pre.width()));
  Eigen::VectorXd out(row.size());
  for (Eigen::Index c = 0; c < row.size(); ++c) {
    const double x = std::isnan(row[c]) ? pre.median[c] : row[c];
    out[c] = (x - pre.mean[c]) / pre.scale[c];
  }
  return out;
}

Eigen::MatrixXd apply_preprocessor(const Preprocessor& pre, const Eigen::MatrixXd& rows) {
  if (rows.cols() != pre.width())
    throw SchemaMismatch("matrix width " + std::to_string(rows.cols()) +
                         " != preprocessor width " + std::to_string(pre.width()));
  Eigen::MatrixXd out(rows.rows(), rows.cols());
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    out.row(r) = apply_preprocessor(pre, Eigen::VectorXd(rows.row(r).transpose())).transpose();
  return out;
}

void Preprocessor::write(std::ostream& out) const {
  out << "blife-preprocessor 1\nwidth " << width() << '\n';
  for (int c = 0; c < width(); ++c)
    out << format_double(median[c]) << ' ' << format_double(mean[c]) << ' '
        << format_double(scale[c]) << ' ' << (pass_through[static_cast<std::size_t>(c)] ? 1 : 0)
        << '\n';
}

Preprocessor Preprocessor::read(LineSource& in) {
  std::string line;
  if (!in.next(line) || line != "blife-preprocessor 1")
    throw std::runtime_error("preprocessor file: unsupported version line");
  if (!in.next(line) || line.rfind("width ", 0) != 0)
    throw std::runtime_error("preprocessor file: missing width");
  const auto w = parse_int(std::string_view(line).substr(6));
  if (!w || *w < 0) throw std::runtime_error("preprocessor file: bad width");
  Preprocessor p;
  p.median.resize(*w);
  p.mean.resize(*w);
  p.scale.resize(*w);
  p.pass_through.resize(static_cast<std::size_t>(*w));
  for (Eigen::Index c = 0; c < *w; ++c) {
    if (!in.next(line)) throw std::runtime_error("preprocessor file: truncated");
    std::vector<std::string_view> parts;
    std::string_view rest = line;
    while (!rest.empty()) {
      const auto sp = rest.find(' ');
      parts.push_back(rest.substr(0, sp));
      rest = sp == std::string_view::npos ? std::string_view{} : rest.substr(sp + 1);
    }
    if (parts.size() != 4) throw std::runtime_error("preprocessor file: bad row");
    const auto a = parse_double(parts[0]), b = parse_double(parts[1]), s = parse_double(parts[2]);
    if (!a || !b || !s) throw std::runtime_error("preprocessor file: bad number");
    p.median[c] = *a;
    p.mean[c] = *b;
    p.scale[c] = *s;
    p.pass_through[static_cast<std::size_t>(c)] = parts[3] == "1";
  }
  return p;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& rows, std::span<const int> cols) {
  Eigen::MatrixXd out(rows.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = rows.col(cols[j]);
  return out;
}

void write_feature_matrix(std::ostream& out, const std::vector<std::string>& names,
                          const Eigen::MatrixXd& rows) {
  if (static_cast<Eigen::Index>(names.size()) != rows.cols())
    throw SchemaMismatch("column name count does not match matrix width");
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << '\n';
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      if (c) out << ',';
      if (!std::isnan(rows(r, c))) out << format_double(rows(r, c));
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_feature_matrix(LineSource& in, std::vector<std::string>* names) {
  std::string line;
  if (!in.next(line)) throw std::runtime_error("feature matrix: empty file");
  std::vector<std::string_view> f;
  split_fields(line, f);
  const auto width = f.size();
  if (names != nullptr) names->assign(f.begin(), f.end());
  std::vector<double> cells;
  std::size_t n = 0;
  while (in.next(line)) {
    if (line.empty()) continue;
    split_fields(line, f);
    if (f.size() != width) throw std::runtime_error("feature matrix: ragged row");
    for (auto cell : f) {
      if (cell.empty()) {
        cells.push_back(kNaN);
        continue;
      }
      const auto v = parse_double(cell);
      if (!v) throw std::runtime_error("feature matrix: bad cell `" + std::string(cell) + "`");
      cells.push_back(*v);
    }
    ++n;
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < width; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cells[r * width + c];
  return m;
}

void write_labels(std::ostream& out, std::span<const QueryInstance> queries) {
  out << "outcome_kind,outcome_minutes\n";
  for (const auto& q : queries)
    out << (q.outcome.observed() ? "life" : "censored_at_least") << ','
        << format_double(q.outcome.minutes) << '\n';
}

std::vector<Outcome> read_labels(LineSource& in) {
  std::string line;
  if (!in.next(line) || line != "outcome_kind,outcome_minutes")
    throw std::runtime_error("labels file: bad header");
  std::vector<Outcome> out;
  std::vector<std::string_view> f;
  while (in.next(line)) {
    if (line.empty()) continue;
    split_fields(line, f);
    const auto m = f.size() == 2 ? parse_double(f[1]) : std::nullopt;
    if (!m) throw std::runtime_error("labels file: bad row `" + line + "`");
    out.push_back({f[0] == "life" ? OutcomeKind::Life : OutcomeKind::CensoredAtLeast, *m});
  }
  return out;
}

}  // namespace blife
