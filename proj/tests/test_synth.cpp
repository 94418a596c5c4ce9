#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "blife/sessionizer.hpp"
#include "blife/synth.hpp"
#include "test_util.hpp"

using namespace blife;
namespace fs = std::filesystem;

namespace {

SynthConfig small(std::uint64_t seed) {
  SynthConfig c;
  c.n_users = 3;
  c.days = 2;
  c.t2_period = 300;
  c.seed = seed;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ManifestEvent ev(double t, ManifestEventKind k, std::string detail) {
  return {"u", t, k, std::move(detail)};
}

// Constant 0.5 %/min discharge from 100 at t = 0, crossing k at (100 - k) * 120 s.
std::vector<ManifestEvent> steady_events(int down_to, bool then_charge) {
  std::vector<ManifestEvent> e{ev(0, ManifestEventKind::ChargeOff, "100")};
  for (int k = 99; k >= down_to; --k)
    e.push_back(ev((100 - k) * 120.0, ManifestEventKind::Crossing, std::to_string(k)));
  if (then_charge) e.push_back(ev((100 - down_to) * 120.0, ManifestEventKind::ChargeOn, std::to_string(down_to)));
  return e;
}

}  // namespace

TEST_CASE("constant rate crossings land at k / r") {
  auto c = small(5);
  c.n_users = 1;
  c.charge_threshold_lo = c.charge_threshold_hi = 0;
  const double r = 0.5;
  const auto w = generate_world(c, RegimeModel::constant(r));
  const auto& ev = w.manifest.events;
  REQUIRE(ev.front().kind == ManifestEventKind::ChargeOff);
  const double t0 = ev.front().t;
  CHECK(t0 >= static_cast<double>(c.start_epoch));
  CHECK(t0 < static_cast<double>(c.start_epoch + c.step_seconds));
  int seen = 0;
  for (const auto& e : ev) {
    if (e.kind == ManifestEventKind::ChargeOn) break;
    if (e.kind != ManifestEventKind::Crossing) continue;
    const int k = std::stoi(e.detail);
    CHECK(e.t == doctest::Approx(t0 + (100 - k) / r * 60).epsilon(1e-12));
    ++seen;
  }
  CHECK(seen == 100);  // all the way to 0 before the first charge
}

TEST_CASE("battery samples follow the charge curve") {
  auto c = small(6);
  c.n_users = 1;
  c.charge_threshold_lo = c.charge_threshold_hi = 0;
  const auto w = generate_world(c, RegimeModel::constant(1.0));
  const Timestamp t0 = static_cast<Timestamp>(w.manifest.events.front().t);
  for (const auto& b : w.inputs.battery) {
    if (b.timestamp - t0 > 90 * 60) break;
    const double charge = 100.0 - static_cast<double>(b.timestamp) / 60.0 + w.manifest.events.front().t / 60.0;
    CHECK(b.state == ChargeState::Discharge);
    CHECK(b.level == static_cast<int>(std::ceil(charge - 1e-9)));
  }
  int charging = 0;
  for (const auto& b : w.inputs.battery) charging += b.state == ChargeState::Charge;
  CHECK(charging > 0);
}

TEST_CASE("same seed gives identical files, other seeds do not") {
  const auto root = fs::temp_directory_path() / "blife_synth_det";
  fs::remove_all(root);
  auto c = small(11);
  const auto model = RegimeModel::two_regime();
  write_world(root / "a", generate_world(c, model), c);
  c.threads = 3;
  write_world(root / "b", generate_world(c, model), c);
  c.seed = 12;
  write_world(root / "c", generate_world(c, model), c);
  for (const char* f : {"battery.csv", "screen.csv", "broadcast.csv", "app.csv", "t1.csv", "t2.csv",
                        "manifest.csv"}) {
    const auto a = slurp(root / "a" / f);
    CHECK(!a.empty());
    CHECK(a == slurp(root / "b" / f));
  }
  CHECK(slurp(root / "a" / "battery.csv") != slurp(root / "c" / "battery.csv"));
  fs::remove_all(root);
}

TEST_CASE("written world parses back") {
  const auto dir = fs::temp_directory_path() / "blife_synth_parse";
  fs::remove_all(dir);
  const auto c = small(3);
  const auto w = generate_world(c, RegimeModel::commuter());
  write_world(dir, w, c);
  DirectoryReport rep;
  const auto in = read_trace_directory(dir, {}, &rep);
  CHECK(in.battery == w.inputs.battery);
  CHECK(in.app == w.inputs.app);
  CHECK(in.t2 == w.inputs.t2);
  CHECK(rep.battery.error_count == 0);
  CHECK(rep.t1.error_count == 0);
  auto src = open_lines(dir / "manifest.csv");
  const auto m = Manifest::read(*src);
  REQUIRE(m.events.size() == w.manifest.events.size());
  CHECK(m.of_user("u01").size() == w.manifest.of_user("u01").size());
  fs::remove_all(dir);
}

TEST_CASE("sessions line up with manifest charge events") {
  auto c = small(21);
  c.days = 4;
  const auto w = generate_world(c, RegimeModel::two_regime());
  const auto traces = build_user_trace(w.inputs);
  for (const auto& [user, trace] : traces) {
    const auto events = w.manifest.of_user(user);
    for (const auto& s : segment_sessions(trace, {})) {
      bool start_ok = false, end_ok = false;
      for (const auto& e : events) {
        if (e.kind == ManifestEventKind::ChargeOff && e.t <= static_cast<double>(s.t_start) &&
            e.t > static_cast<double>(s.t_start - c.battery_period))
          start_ok = true;
        if (e.kind == ManifestEventKind::ChargeOn && e.t > static_cast<double>(s.t_end) &&
            e.t <= static_cast<double>(s.t_end + c.battery_period))
          end_ok = true;
      }
      CHECK(start_ok);
      // the last session of the trace may be cut by the end of the corpus
      const bool at_end = s.t_end + c.battery_period >= c.start_epoch + c.days * 86400;
      CHECK((end_ok || at_end));
    }
  }
}

TEST_CASE("true remaining life") {
  const auto e = steady_events(10, true);
  const auto at60 = true_remaining_life(e, 40 * 120.0, 20);
  CHECK_FALSE(at60.censored_by_charge);
  CHECK(at60.minutes == doctest::Approx(80.0));
  CHECK(true_remaining_life(e, 80 * 120.0, 20).minutes == 0.0);
  CHECK_THROWS_AS(true_remaining_life(e, 80 * 120.0 + 1, 20), OutsideDischarge);
  CHECK_THROWS_AS(true_remaining_life(e, -5, 20), OutsideDischarge);
  CHECK_THROWS_AS(true_remaining_life(e, 90 * 120.0 + 1, 20), OutsideDischarge);  // while charging

  const auto early = steady_events(40, true);
  CHECK(true_remaining_life(early, 100.0, 20).censored_by_charge);
  const auto open = steady_events(40, false);
  CHECK(true_remaining_life(open, 100.0, 20).censored_by_charge);

  std::vector<ManifestEvent> low{ev(0, ManifestEventKind::ChargeOff, "15")};
  CHECK_THROWS_AS(true_remaining_life(low, 10.0, 20), OutsideDischarge);

  Manifest m;
  m.events = e;
  CHECK(true_remaining_life(m, "u", 40 * 120.0, 20).minutes == doctest::Approx(80.0));
  CHECK_THROWS_AS(true_remaining_life(m, "nobody", 10.0, 20), OutsideDischarge);
}

TEST_CASE("configuration checks") {
  SynthConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_users = 0;
  CHECK_THROWS_AS(c.validate(), ConfigInvalid);
  c = {};
  c.charge_threshold_lo = 50;
  c.charge_threshold_hi = 40;
  CHECK_THROWS_AS(c.validate(), ConfigInvalid);
  c = {};
  c.charge_hours = {24};
  CHECK_THROWS_AS(c.validate(), ConfigInvalid);
  CHECK_THROWS_AS(RegimeModel::constant(0).validate(), ConfigInvalid);
  auto m = RegimeModel::two_regime();
  m.transition[0] = {0.5, 0.6};
  CHECK_THROWS_AS(m.validate(), ConfigInvalid);
  CHECK_THROWS_AS(RegimeModel::preset("bogus"), ConfigInvalid);
  CHECK_NOTHROW(RegimeModel::preset("commuter").validate());
  CHECK_THROWS_AS(generate_world(SynthConfig{.n_users = -1}, RegimeModel::two_regime()), ConfigInvalid);
}

TEST_CASE("charge hours plug the phone in") {
  auto c = small(8);
  c.n_users = 1;
  c.days = 3;
  c.charge_hours = {7};
  c.charge_threshold_lo = c.charge_threshold_hi = 0;
  const auto w = generate_world(c, RegimeModel::constant(0.05));
  int at_seven = 0;
  for (const auto& e : w.manifest.events)
    if (e.kind == ManifestEventKind::ChargeOn &&
        static_cast<long long>(e.t) % 86400 == 7 * 3600 + static_cast<long long>(w.manifest.events.front().t - c.start_epoch))
      ++at_seven;
  CHECK(at_seven >= 2);
}
