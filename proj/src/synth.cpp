#include "blife/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "blife/rng.hpp"

namespace blife {

void RegimeModel::validate() const {
  if (regimes.empty()) throw ConfigInvalid("regime model has no regimes");
  if (transition.size() != regimes.size()) throw ConfigInvalid("transition matrix has wrong size");
  for (std::size_t i = 0; i < regimes.size(); ++i) {
    const auto& r = regimes[i];
    if (!(r.rate > 0.0)) throw ConfigInvalid("regime " + r.name + ": rate must be > 0");
    if (r.rate_spread < 0.0 || r.rate_spread >= 1.0)
      throw ConfigInvalid("regime " + r.name + ": rate_spread must be in [0, 1)");
    if (r.screen_on_prob < 0.0 || r.screen_on_prob > 1.0 || r.app_intensity < 0.0 ||
        r.app_intensity > 1.0)
      throw ConfigInvalid("regime " + r.name + ": probabilities must be in [0, 1]");
    if (r.sensor_mean.empty()) throw ConfigInvalid("regime " + r.name + ": empty sensor_mean");
    const auto& row = transition[i];
    if (row.size() != regimes.size()) throw ConfigInvalid("transition row has wrong size");
    double sum = 0.0;
    for (double p : row) {
      if (p < 0.0) throw ConfigInvalid("negative transition probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigInvalid("transition rows must sum to 1");
  }
  if (has_schedule)
    for (int g : schedule)
      if (g < -1 || g >= static_cast<int>(regimes.size()))
        throw ConfigInvalid("schedule names an unknown regime");
}

RegimeModel RegimeModel::constant(double rate) {
  RegimeModel m;
  m.regimes.push_back({"constant", rate, 0.0, 0.3, 0.3, {0.0}});
  m.transition = {{1.0}};
  return m;
}

RegimeModel RegimeModel::two_regime() {
  RegimeModel m;
  m.regimes.push_back({"idle", 0.08, 0.0, 0.05, 0.05, {0.0, 1.0, -1.0}});
  m.regimes.push_back({"active", 0.9, 0.0, 0.9, 0.8, {3.0, 4.0, 2.0}});
  m.transition = {{0.985, 0.015}, {0.03, 0.97}};
  return m;
}

RegimeModel RegimeModel::commuter() {
  RegimeModel m;
  m.regimes.push_back({"day", 0.1, 0.0, 0.2, 0.2, {0.0, 1.0}});
  m.regimes.push_back({"evening", 0.6, 0.8, 0.8, 0.7, {2.0, 3.0}});
  m.transition = {{1.0, 0.0}, {0.0, 1.0}};
  m.has_schedule = true;
  for (int h = 0; h < 24; ++h) m.schedule[static_cast<std::size_t>(h)] = h >= 18 ? 1 : 0;
  return m;
}

RegimeModel RegimeModel::preset(const std::string& name, double rate) {
  if (name == "constant") return constant(rate);
  if (name == "two_regime") return two_regime();
  if (name == "commuter") return commuter();
  throw ConfigInvalid("unknown regime preset `" + name + "`");
}

void SynthConfig::validate() const {
  if (n_users <= 0 || days <= 0) throw ConfigInvalid("n_users and days must be positive");
  if (battery_period <= 0 || t1_period <= 0 || t2_period <= 0 || step_seconds <= 0)
    throw ConfigInvalid("periods must be positive");
  if (!(start_level > 0.0 && start_level <= 100.0)) throw ConfigInvalid("start_level must be in (0, 100]");
  if (charge_threshold_lo < 0.0 || charge_threshold_hi < charge_threshold_lo ||
      charge_threshold_hi >= 100.0)
    throw ConfigInvalid("charge thresholds must satisfy 0 <= lo <= hi < 100");
  if (!(charge_rate > 0.0)) throw ConfigInvalid("charge_rate must be > 0");
  if (!(charge_to > charge_threshold_hi && charge_to <= 100.0))
    throw ConfigInvalid("charge_to must be above the thresholds and <= 100");
  for (int h : charge_hours)
    if (h < 0 || h > 23) throw ConfigInvalid("charge_hours must be in 0..23");
  if (broadcast_prob < 0.0 || broadcast_prob > 1.0 || sensor_missing_prob < 0.0 ||
      sensor_missing_prob > 1.0)
    throw ConfigInvalid("probabilities must be in [0, 1]");
  if (n_broadcast_types <= 0 || n_apps <= 0 || t1_width <= 0 || t2_width <= 0)
    throw ConfigInvalid("vocabulary sizes and sensor widths must be positive");
  if (threads <= 0) throw ConfigInvalid("threads must be positive");
}

const char* to_string(ManifestEventKind kind) {
  switch (kind) {
    case ManifestEventKind::Regime: return "regime";
    case ManifestEventKind::ChargeOn: return "charge_on";
    case ManifestEventKind::ChargeOff: return "charge_off";
    case ManifestEventKind::Crossing: return "crossing";
  }
  return "?";
}

void Manifest::write(std::ostream& out) const {
  out << "user_id,t,event,detail\n";
  for (const auto& e : events)
    out << e.user_id << ',' << format_double(e.t) << ',' << to_string(e.kind) << ',' << e.detail
        << '\n';
}

Manifest Manifest::read(LineSource& in) {
  std::string line;
  if (!in.next(line) || line != "user_id,t,event,detail")
    throw std::runtime_error("manifest: bad header");
  Manifest m;
  std::vector<std::string_view> f;
  while (in.next(line)) {
    if (line.empty()) continue;
    split_fields(line, f);
    if (f.size() != 4) throw std::runtime_error("manifest: bad row `" + line + "`");
    ManifestEvent e;
    e.user_id = std::string(f[0]);
    const auto t = parse_double(f[1]);
    if (!t) throw std::runtime_error("manifest: bad time `" + line + "`");
    e.t = *t;
    bool known = false;
    for (auto k : {ManifestEventKind::Regime, ManifestEventKind::ChargeOn,
                   ManifestEventKind::ChargeOff, ManifestEventKind::Crossing})
      if (f[2] == to_string(k)) {
        e.kind = k;
        known = true;
      }
    if (!known) throw std::runtime_error("manifest: unknown event `" + line + "`");
    e.detail = std::string(f[3]);
    m.events.push_back(std::move(e));
  }
  return m;
}

std::vector<ManifestEvent> Manifest::of_user(const std::string& user) const {
  std::vector<ManifestEvent> out;
  for (const auto& e : events)
    if (e.user_id == user) out.push_back(e);
  return out;
}

namespace {

struct Segment {
  double t0 = 0.0;
  double c0 = 0.0;
  double slope = 0.0;  // %/s
  bool charging = false;
};

struct UserWorld {
  TraceInputs inputs;
  std::vector<ManifestEvent> events;
};

int display_level(double c) {
  return std::clamp(static_cast<int>(std::ceil(c - 1e-9)), 0, 100);
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string user_name(int i, int n) {
  const int width = std::max(2, static_cast<int>(std::to_string(n - 1).size()));
  std::string s = std::to_string(i);
  return "u" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(s.size(), width), '0') + s;
}

class UserSimulator {
 public:
  UserSimulator(const SynthConfig& cfg, const RegimeModel& model, std::string user)
      : cfg_(cfg), model_(model), user_(std::move(user)) {
    const auto seed = derive_seed(cfg.seed, user_);
    regime_rng_ = Rng(derive_seed(seed, "regime"));
    emit_rng_ = Rng(derive_seed(seed, "emit"));
    sensor_rng_ = Rng(derive_seed(seed, "sensor"));
    for (const auto& r : model.regimes)
      rate_mult_.push_back(1.0 + r.rate_spread * (2.0 * regime_rng_.uniform01() - 1.0));
    t_begin_ = cfg.start_epoch + static_cast<Timestamp>(regime_rng_.below(
                                     static_cast<std::uint64_t>(cfg.step_seconds)));
    t_end_ = cfg.start_epoch + static_cast<Timestamp>(cfg.days) * 86400;
  }

  UserWorld run() {
    c_ = cfg_.start_level;
    charging_ = false;
    draw_threshold();
    event(static_cast<double>(t_begin_), ManifestEventKind::ChargeOff, format_double(c_));

    int regime = -1;
    int prev_hour = -1;
    Timestamp next_t1 = t_begin_, next_t2 = t_begin_;
    for (Timestamp step = t_begin_; step < t_end_; step += cfg_.step_seconds) {
      const Timestamp step_end = std::min<Timestamp>(step + cfg_.step_seconds, t_end_);
      const int hour = static_cast<int>(((step + cfg_.utc_offset) % 86400 + 86400) % 86400 / 3600);
      const int next = next_regime(regime, hour);
      if (next != regime) {
        regime = next;
        event(static_cast<double>(step), ManifestEventKind::Regime,
              model_.regimes[static_cast<std::size_t>(regime)].name);
      }
      if (hour != prev_hour && prev_hour >= 0 && !charging_ &&
          std::find(cfg_.charge_hours.begin(), cfg_.charge_hours.end(), hour) !=
              cfg_.charge_hours.end() &&
          c_ < cfg_.charge_to)
        start_charge(static_cast<double>(step));
      prev_hour = hour;

      advance_battery(static_cast<double>(step), static_cast<double>(step_end), regime);
      emit_step(step, step_end, regime);
      for (; next_t1 < step_end; next_t1 += cfg_.t1_period)
        sensor_sample(next_t1, SensorGroup::T1, cfg_.t1_width, regime);
      for (; next_t2 < step_end; next_t2 += cfg_.t2_period)
        sensor_sample(next_t2, SensorGroup::T2, cfg_.t2_width, regime);
    }
    sample_battery();
    return std::move(out_);
  }

 private:
  void event(double t, ManifestEventKind kind, std::string detail) {
    out_.events.push_back({user_, t, kind, std::move(detail)});
  }

  void draw_threshold() {
    threshold_ = cfg_.charge_threshold_lo +
                 (cfg_.charge_threshold_hi - cfg_.charge_threshold_lo) * regime_rng_.uniform01();
  }

  int next_regime(int current, int hour) {
    if (model_.has_schedule) {
      const int forced = model_.schedule[static_cast<std::size_t>(hour)];
      if (forced >= 0) return forced;
    }
    if (current < 0) return 0;
    const auto& row = model_.transition[static_cast<std::size_t>(current)];
    const double u = regime_rng_.uniform01();
    double acc = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      acc += row[j];
      if (u < acc) return static_cast<int>(j);
    }
    return current;
  }

  void start_charge(double t) {
    charging_ = true;
    event(t, ManifestEventKind::ChargeOn, format_double(c_));
    segments_.push_back({t, c_, cfg_.charge_rate / 60.0, true});
  }

  void advance_battery(double now, double end, int regime) {
    const double rate = model_.regimes[static_cast<std::size_t>(regime)].rate *
                        rate_mult_[static_cast<std::size_t>(regime)];
    segments_.push_back({now, c_, charging_ ? cfg_.charge_rate / 60.0 : -rate / 60.0, charging_});
    while (now < end) {
      if (charging_) {
        const double to_full = (cfg_.charge_to - c_) / cfg_.charge_rate * 60.0;
        if (now + to_full <= end) {
          now += to_full;
          c_ = cfg_.charge_to;
          charging_ = false;
          draw_threshold();
          event(now, ManifestEventKind::ChargeOff, format_double(c_));
          segments_.push_back({now, c_, -rate / 60.0, false});
        } else {
          c_ += cfg_.charge_rate * (end - now) / 60.0;
          now = end;
        }
        continue;
      }
      if (c_ - std::floor(c_) < 1e-9) c_ = std::floor(c_);
      const double k = std::ceil(c_) - 1.0;  // next whole level strictly below
      if (k < 0.0) {
        start_charge(now);
        continue;
      }
      const double dt = (c_ - k) / rate * 60.0;
      if (now + dt <= end) {
        now += dt;
        c_ = k;
        event(now, ManifestEventKind::Crossing, std::to_string(static_cast<int>(k)));
        if (k <= threshold_ || k == 0.0) start_charge(now);
      } else {
        c_ -= rate * (end - now) / 60.0;
        now = end;
      }
    }
  }

  void emit_step(Timestamp step, Timestamp step_end, int regime) {
    const auto& r = model_.regimes[static_cast<std::size_t>(regime)];
    const auto span = static_cast<std::uint64_t>(step_end - step);
    const bool on = emit_rng_.bernoulli(r.screen_on_prob);
    if (on != screen_on_) {
      screen_on_ = on;
      out_.inputs.screen.push_back({user_, step + static_cast<Timestamp>(emit_rng_.below(span)),
                                    on ? ScreenAction::On : ScreenAction::Off});
    }
    if (emit_rng_.bernoulli(r.app_intensity)) {
      const double u = emit_rng_.uniform01();
      const int idx = std::min(cfg_.n_apps - 1, static_cast<int>(cfg_.n_apps * u * u));
      std::string app = "com.app." + std::to_string(1000 + idx).substr(1);
      out_.inputs.app.push_back({user_, step + static_cast<Timestamp>(emit_rng_.below(span)),
                                 std::move(app),
                                 screen_on_ ? AppState::Foreground : AppState::Background});
    }
    if (emit_rng_.bernoulli(cfg_.broadcast_prob)) {
      const double u = emit_rng_.uniform01();
      const int type = std::min(cfg_.n_broadcast_types - 1,
                                static_cast<int>(cfg_.n_broadcast_types * std::pow(u, 1.5)));
      out_.inputs.broadcast.push_back(
          {user_, step + static_cast<Timestamp>(emit_rng_.below(span)), type});
    }
  }

  void sensor_sample(Timestamp t, SensorGroup group, int width, int regime) {
    const auto& mean = model_.regimes[static_cast<std::size_t>(regime)].sensor_mean;
    SensorSample s{user_, t, group, std::vector<double>(static_cast<std::size_t>(width))};
    for (std::size_t j = 0; j < s.values.size(); ++j)
      s.values[j] = sensor_rng_.bernoulli(cfg_.sensor_missing_prob)
                        ? kMissing
                        : round2(mean[j % mean.size()] + cfg_.sensor_noise * sensor_rng_.normal());
    (group == SensorGroup::T1 ? out_.inputs.t1 : out_.inputs.t2).push_back(std::move(s));
  }

  void sample_battery() {
    std::size_t seg = 0;
    for (Timestamp t = t_begin_; t < t_end_; t += cfg_.battery_period) {
      const auto tt = static_cast<double>(t);
      while (seg + 1 < segments_.size() && segments_[seg + 1].t0 <= tt) ++seg;
      const auto& s = segments_[seg];
      const double c = s.c0 + s.slope * (tt - s.t0);
      out_.inputs.battery.push_back({user_, t,
                                     s.charging ? ChargeState::Charge : ChargeState::Discharge,
                                     display_level(c)});
    }
  }

  const SynthConfig& cfg_;
  const RegimeModel& model_;
  std::string user_;
  Rng regime_rng_{0}, emit_rng_{0}, sensor_rng_{0};
  std::vector<double> rate_mult_;
  Timestamp t_begin_ = 0, t_end_ = 0;
  double c_ = 0.0;
  double threshold_ = 0.0;
  bool charging_ = false;
  bool screen_on_ = false;
  std::vector<Segment> segments_;
  UserWorld out_;
};

template <typename T>
void append(std::vector<T>& dst, std::vector<T>& src) {
  dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
}

}  // namespace

World generate_world(const SynthConfig& cfg, const RegimeModel& model) {
  cfg.validate();
  model.validate();
  World world;
  for (int i = 0; i < cfg.n_users; ++i) world.users.push_back(user_name(i, cfg.n_users));
  std::vector<UserWorld> parts(world.users.size());
  auto run = [&](std::size_t i) { parts[i] = UserSimulator(cfg, model, world.users[i]).run(); };
  const auto n = parts.size();
  const auto t = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), n);
  if (t <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < t; ++k)
      pool.emplace_back([&, k] {
        for (std::size_t i = k; i < n; i += t) run(i);
      });
  }
  for (auto& p : parts) {
    append(world.inputs.battery, p.inputs.battery);
    append(world.inputs.screen, p.inputs.screen);
    append(world.inputs.broadcast, p.inputs.broadcast);
    append(world.inputs.app, p.inputs.app);
    append(world.inputs.t1, p.inputs.t1);
    append(world.inputs.t2, p.inputs.t2);
    append(world.manifest.events, p.events);
  }
  return world;
}

void write_world(const std::filesystem::path& dir, const World& world, const SynthConfig& cfg) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open(LogFiles::battery);
    write_battery_log(out, world.inputs.battery);
  }
  {
    auto out = open(LogFiles::screen);
    write_screen_log(out, world.inputs.screen);
  }
  {
    auto out = open(LogFiles::broadcast);
    write_broadcast_log(out, world.inputs.broadcast);
  }
  {
    auto out = open(LogFiles::app);
    write_app_log(out, world.inputs.app);
  }
  {
    auto out = open(LogFiles::t1);
    write_sensor_log(out, SensorGroup::T1, cfg.t1_width, world.inputs.t1);
  }
  {
    auto out = open(LogFiles::t2);
    write_sensor_log(out, SensorGroup::T2, cfg.t2_width, world.inputs.t2);
  }
  auto out = open("manifest.csv");
  world.manifest.write(out);
}

TrueLife true_remaining_life(const std::vector<ManifestEvent>& events, double t, int L) {
  std::size_t off = events.size();
  std::size_t i = 0;
  for (; i < events.size() && events[i].t <= t; ++i) {
    if (events[i].kind == ManifestEventKind::ChargeOff) off = i;
    if (events[i].kind == ManifestEventKind::ChargeOn) off = events.size();
  }
  if (off == events.size()) throw OutsideDischarge("time is not inside a discharge interval");
  const auto start_level = parse_double(events[off].detail);
  if (start_level && *start_level <= L) throw OutsideDischarge("discharge starts at or below L");
  for (std::size_t k = off + 1; k < events.size(); ++k) {
    const auto& e = events[k];
    if (e.kind == ManifestEventKind::ChargeOn) return {true, 0.0};
    if (e.kind != ManifestEventKind::Crossing) continue;
    const auto level = parse_int(e.detail);
    if (!level || *level > L) continue;
    if (e.t < t) throw OutsideDischarge("time is after the level-L crossing");
    return {false, (e.t - t) / 60.0};
  }
  return {true, 0.0};
}

TrueLife true_remaining_life(const Manifest& manifest, const std::string& user, double t, int L) {
  return true_remaining_life(manifest.of_user(user), t, L);
}

}  // namespace blife
