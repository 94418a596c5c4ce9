#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "blife/rng.hpp"
#include "blife/sessionizer.hpp"
#include "test_util.hpp"

using namespace blife;
using test::bat;

namespace {

std::vector<BatteryEntry> concat(std::initializer_list<std::vector<BatteryEntry>> parts) {
  std::vector<BatteryEntry> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

TEST_CASE("gap longer than the threshold splits") {
  const auto b = concat({test::ramp("u", 100, 700, 60, [](Timestamp) { return 80; }),
                         test::ramp("u", 1301, 1900, 60, [](Timestamp) { return 79; })});
  const auto s = segment_sessions(b, {});
  REQUIRE(s.size() == 2);
  CHECK(s[0].t_end == 700);
  CHECK(s[1].t_start == 1301);
  // exactly 600 s does not split
  const auto c = concat({test::ramp("u", 100, 700, 60, [](Timestamp) { return 80; }),
                         test::ramp("u", 1300, 1900, 60, [](Timestamp) { return 79; })});
  CHECK(segment_sessions(c, {}).size() == 1);
}

TEST_CASE("level rise splits, flat level does not") {
  const std::vector<BatteryEntry> b{bat("u", 10, 50), bat("u", 70, 50), bat("u", 130, 49),
                                    bat("u", 190, 51), bat("u", 250, 50)};
  const auto s = segment_sessions(b, {});
  REQUIRE(s.size() == 2);
  CHECK(s[0].entries.size() == 3);
  CHECK(s[1].b_start == 51);
  CHECK(s[1].b_end == 50);
}

TEST_CASE("charge entries never enter a session") {
  const std::vector<BatteryEntry> only{bat("u", 1, 10, ChargeState::Charge),
                                       bat("u", 2, 20, ChargeState::Charge)};
  CHECK(segment_sessions(only, {}).empty());
  CHECK(segment_sessions(std::vector<BatteryEntry>{}, {}).empty());
  const std::vector<BatteryEntry> mixed{bat("u", 0 + 1, 90), bat("u", 61, 89),
                                        bat("u", 121, 89, ChargeState::Charge), bat("u", 181, 88)};
  const auto s = segment_sessions(mixed, {});
  REQUIRE(s.size() == 1);  // 120 s gap, level still falling
  CHECK(s[0].entries.size() == 3);
}

TEST_CASE("single-entry session") {
  const auto s = segment_sessions(std::vector<BatteryEntry>{bat("u", 5, 70)}, {});
  REQUIRE(s.size() == 1);
  CHECK(s[0].duration() == 0);
  CHECK(s[0].b_start == 70);
}

TEST_CASE("filters apply in order and count") {
  SegmentationConfig cfg;
  std::vector<Session> in{
      test::make_session(test::ramp("u", 0 + 1, 3601, 60, [](Timestamp) { return 60; })),
      test::make_session(test::ramp("u", 5000, 8599, 60, [](Timestamp) { return 60; })),
      test::make_session(test::ramp("u", 9000, 16000, 60, [](Timestamp) { return 29; })),
      test::make_session(test::ramp("u", 20000, 27000, 60, [](Timestamp) { return 30; }))};
  FilterCounts c;
  const auto out = filter_sessions(in, cfg, {}, &c);
  CHECK(c.input == 4);
  CHECK(c.after_duration == 3);
  CHECK(c.after_start_battery == 2);
  REQUIRE(out.size() == 2);
  CHECK(out[0].t_start == 1);
  CHECK(out[1].t_start == 20000);
  CHECK(filter_sessions(in, cfg, {.duration = false, .start_battery = true}).size() == 3);
}

TEST_CASE("labels use the first entry at or below L") {
  SegmentationConfig cfg;
  auto s = test::make_session(test::ramp("u", 1, 2101, 60, [](Timestamp t) { return 45 - int(t / 60); }));
  const auto l = label_session(s, cfg);
  CHECK(l.observed);
  CHECK(l.t_event == 1501);
  CHECK(l.threshold_L == 20);
  cfg.threshold_L = 5;
  CHECK_FALSE(label_session(s, cfg).observed);
  auto exact = test::make_session({bat("u", 1, 40), bat("u", 61, 20), bat("u", 121, 19)});
  CHECK(label_session(exact, {}).t_event == 61);
}

TEST_CASE("battery_at is a right-continuous step") {
  const auto s = test::make_session({bat("u", 100, 50), bat("u", 160, 49), bat("u", 220, 48)});
  CHECK(battery_at(s, 100) == 50);
  CHECK(battery_at(s, 159) == 50);
  CHECK(battery_at(s, 160) == 49);
  CHECK(battery_at(s, 220) == 48);
  CHECK_THROWS_AS(battery_at(s, 99), OutOfRange);
  CHECK_THROWS_AS(battery_at(s, 221), OutOfRange);
}

TEST_CASE("config validation") {
  SegmentationConfig c;
  CHECK_NOTHROW(c.validate());
  c.min_start_battery = 20;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.gap_threshold = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("empirical cdf") {
  const auto cdf = empirical_cdf({3, 1, 2, 2});
  REQUIRE(cdf.points.size() == 3);
  CHECK(cdf.at(0.5) == 0.0);
  CHECK(cdf.at(1) == 0.25);
  CHECK(cdf.at(2) == 0.75);
  CHECK(cdf.at(2.5) == 0.75);
  CHECK(cdf.at(3) == 1.0);
  CHECK(cdf.at(99) == 1.0);

  const std::vector<Session> ss{test::make_session({bat("u", 0 + 1, 90), bat("u", 7201, 40)}),
                                test::make_session({bat("u", 9001, 60), bat("u", 12601, 50)})};
  const auto all = empirical_cdfs(ss);
  CHECK(all.duration.at(1.0) == 0.5);
  CHECK(all.duration.at(2.0) == 1.0);
  CHECK(all.consumption.at(10) == 0.5);
  CHECK(all.begin_level.at(60) == 0.5);
  CHECK_THROWS_AS(empirical_cdfs(std::vector<Session>{}), std::invalid_argument);
}

TEST_CASE("segmentation partitions the discharge entries") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<BatteryEntry> b;
    Timestamp t = 1;
    int level = 100;
    for (int i = 0; i < 500; ++i) {
      t += rng.bernoulli(0.05) ? 1000 : 60;
      if (rng.bernoulli(0.05)) level = static_cast<int>(rng.between(30, 100));
      else if (rng.bernoulli(0.3) && level > 0) --level;
      b.push_back(bat("u", t, level, rng.bernoulli(0.1) ? ChargeState::Charge : ChargeState::Discharge));
    }
    const auto s = segment_sessions(b, {});
    std::vector<BatteryEntry> back;
    for (const auto& x : s) {
      for (std::size_t i = 1; i < x.entries.size(); ++i) {
        CHECK(x.entries[i].level <= x.entries[i - 1].level);
        CHECK(x.entries[i].timestamp - x.entries[i - 1].timestamp <= 600);
      }
      back.insert(back.end(), x.entries.begin(), x.entries.end());
    }
    std::vector<BatteryEntry> discharge;
    for (const auto& e : b)
      if (e.state == ChargeState::Discharge) discharge.push_back(e);
    CHECK(back == discharge);
    // segmenting one session's entries again gives that session back
    for (const auto& x : s) {
      const auto again = segment_sessions(x.entries, {});
      REQUIRE(again.size() == 1);
      CHECK(again[0].entries == x.entries);
    }
  }
}

TEST_CASE("sessions csv round trip") {
  const std::vector<Session> ss{test::make_session({bat("u", 1, 90), bat("u", 3601, 10)}),
                                test::make_session({bat("v", 10, 60), bat("v", 7210, 50)})};
  std::vector<SessionLabel> ls;
  for (const auto& s : ss) ls.push_back(label_session(s, {}));
  std::ostringstream out;
  write_sessions_csv(out, ss, ls);
  test::TextSource src(out.str());
  const auto rows = read_sessions_csv(src);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == SessionRow{"u", 1, 3601, 90, 10, true, 3601});
  CHECK(rows[1] == SessionRow{"v", 10, 7210, 60, 50, false, std::nullopt});
  CHECK_THROWS(write_sessions_csv(out, ss, std::vector<SessionLabel>{}));
}
