#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blife/ingest.hpp"
#include "blife/textio.hpp"

namespace blife {

class ConfigInvalid : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Regime {
  std::string name;
  double rate = 0.2;            // %/min
  double rate_spread = 0.0;     // per-user multiplier drawn from [1 - s, 1 + s]
  double screen_on_prob = 0.3;  // per step
  double app_intensity = 0.3;   // probability of an app sample per step
  std::vector<double> sensor_mean{0.0};  // cycled over sensor slots
};

struct RegimeModel {
  std::vector<Regime> regimes;
  std::vector<std::vector<double>> transition;  // per step, rows sum to 1
  // Local hour -> forced regime index; -1 leaves that hour to the Markov chain.
  std::array<int, 24> schedule{};
  bool has_schedule = false;

  void validate() const;

  static RegimeModel constant(double rate);
  /// Idle/active chain with persistent regimes.
  static RegimeModel two_regime();
  /// Low common rate until 18:00, then a per-user evening rate.
  static RegimeModel commuter();
  static RegimeModel preset(const std::string& name, double rate = 0.5);
};

struct SynthConfig {
  int n_users = 8;
  int days = 14;
  Timestamp start_epoch = 1425168000;  // a UTC midnight
  Timestamp utc_offset = 0;            // for schedules
  int battery_period = 5;
  int t2_period = 15;
  int t1_period = 60;
  int step_seconds = 60;               // regime and emission step
  double start_level = 100.0;
  // A discharge ends once the level falls to a threshold drawn per session
  // from [lo, hi]; reaching 0 always starts a charge.
  double charge_threshold_lo = 5.0;
  double charge_threshold_hi = 45.0;
  std::vector<int> charge_hours;       // also plug in at the start of these hours
  double charge_rate = 2.0;            // %/min
  double charge_to = 100.0;
  double broadcast_prob = 0.3;
  int n_broadcast_types = 86;
  int n_apps = 80;
  int t1_width = 9;
  int t2_width = 150;
  double sensor_noise = 1.0;
  double sensor_missing_prob = 0.01;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

enum class ManifestEventKind { Regime, ChargeOn, ChargeOff, Crossing };
const char* to_string(ManifestEventKind kind);

struct ManifestEvent {
  std::string user_id;
  double t = 0.0;  // exact seconds
  ManifestEventKind kind = ManifestEventKind::Regime;
  std::string detail;  // regime name, level at a charge change, or crossed level
};

class Manifest {
 public:
  std::vector<ManifestEvent> events;  // users in id order, time order within a user

  void write(std::ostream& out) const;
  static Manifest read(LineSource& in);

  /// Events of one user.
  std::vector<ManifestEvent> of_user(const std::string& user) const;
};

struct World {
  TraceInputs inputs;
  Manifest manifest;
  std::vector<std::string> users;
};

World generate_world(const SynthConfig& cfg, const RegimeModel& model);

/// Writes the six log files and manifest.csv.
void write_world(const std::filesystem::path& dir, const World& world, const SynthConfig& cfg);

class OutsideDischarge : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct TrueLife {
  bool censored_by_charge = false;
  double minutes = 0.0;
};

/// Minutes from t until the level-L crossing of the discharge interval
/// containing t, or censored_by_charge when a charge starts first.
TrueLife true_remaining_life(const Manifest& manifest, const std::string& user, double t, int L);

/// Same, on one user's events.
TrueLife true_remaining_life(const std::vector<ManifestEvent>& user_events, double t, int L);

}  // namespace blife
