#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "blife/ingest.hpp"
#include "blife/rng.hpp"
#include "test_util.hpp"

using namespace blife;
using test::TextSource;

namespace {

ParseOptions lenient() {
  ParseOptions o;
  o.max_error_rate = 1.0;
  return o;
}

std::vector<BatteryEntry> battery(const std::string& text, ParseReport* rep = nullptr,
                                  ParseOptions opts = lenient()) {
  TextSource src(text);
  return collect<BatteryEntry>(
      [&](const Sink<BatteryEntry>& s) { return parse_battery_log(src, s, opts); }, rep);
}

}  // namespace

TEST_CASE("battery line maps field by field") {
  const auto v = battery("user_id,timestamp,charge_state,level\n0a50e09262,1426245782,discharge,54\n");
  REQUIRE(v.size() == 1);
  CHECK(v[0] == BatteryEntry{"0a50e09262", 1426245782, ChargeState::Discharge, 54});
}

TEST_CASE("header only gives nothing") {
  ParseReport rep;
  CHECK(battery("user_id,timestamp,charge_state,level\n", &rep).empty());
  CHECK(rep.error_count == 0);
  CHECK(rep.data_lines == 0);
}

TEST_CASE("level out of range is a line error") {
  ParseReport rep;
  const auto v = battery("user_id,timestamp,charge_state,level\nu,10,discharge,101\nu,11,discharge,100\n", &rep);
  REQUIRE(v.size() == 1);
  CHECK(v[0].level == 100);
  REQUIRE(rep.errors.size() == 1);
  CHECK(rep.errors[0].kind == LineErrorKind::BadLevel);
  CHECK(rep.errors[0].line == 2);
}

TEST_CASE("battery line errors by kind") {
  ParseReport rep;
  battery("user_id,timestamp,charge_state,level\n"
          "u,10,discharge\n"
          "u,abc,discharge,5\n"
          "u,10,sleeping,5\n"
          "u,10,discharge,-1\n",
          &rep);
  REQUIRE(rep.errors.size() == 4);
  CHECK(rep.errors[0].kind == LineErrorKind::FieldCount);
  CHECK(rep.errors[1].kind == LineErrorKind::BadTimestamp);
  CHECK(rep.errors[2].kind == LineErrorKind::BadState);
  CHECK(rep.errors[3].kind == LineErrorKind::BadLevel);
}

TEST_CASE("charge state aliases") {
  const auto v = battery(
      "user_id,timestamp,charge_state,level\nu,1,full,100\nu,2,Charging,50\nu,3,discharging,49\n");
  REQUIRE(v.size() == 3);
  CHECK(v[0].state == ChargeState::Charge);
  CHECK(v[1].state == ChargeState::Charge);
  CHECK(v[2].state == ChargeState::Discharge);
}

TEST_CASE("comments, blank lines and CRLF are tolerated") {
  const auto v = battery("# exported\r\nuser_id,timestamp,charge_state,level\r\n\r\n# mid\r\nu,5,discharge,7\r\n");
  REQUIRE(v.size() == 1);
  CHECK(v[0].level == 7);
}

TEST_CASE("missing header is fatal") {
  CHECK_THROWS_AS(battery("u,5,discharge,7\n"), IngestError);
  CHECK_THROWS_AS(battery(""), IngestError);
}

TEST_CASE("error-rate cap") {
  std::string text = "user_id,timestamp,charge_state,level\n";
  for (int i = 1; i <= 99; ++i) text += "u," + std::to_string(i) + ",discharge,50\n";
  text += "u,100,discharge,500\n";
  ParseOptions strict;  // 1 bad line out of 100 sits exactly at the default cap
  CHECK_NOTHROW(battery(text, nullptr, strict));
  text += "u,101,discharge,500\n";
  try {
    battery(text, nullptr, strict);
    FAIL("expected ErrorRateExceeded");
  } catch (const IngestError& e) {
    CHECK(e.kind() == IngestError::Kind::ErrorRateExceeded);
  }
}

TEST_CASE("reported errors are capped, counted errors are not") {
  std::string text = "user_id,timestamp,charge_state,level\n";
  for (int i = 0; i < 50; ++i) text += "u,x,discharge,50\n";
  ParseOptions o = lenient();
  o.max_reported_errors = 3;
  ParseReport rep;
  battery(text, &rep, o);
  CHECK(rep.error_count == 50);
  CHECK(rep.errors.size() == 3);
}

TEST_CASE("screen and broadcast events") {
  TextSource s("user_id,timestamp,action\nu1,100,on\nu1,100,sleep\n");
  ParseReport rep;
  const auto screen = collect<ScreenEvent>(
      [&](const Sink<ScreenEvent>& k) { return parse_screen_log(s, k, lenient()); }, &rep);
  REQUIRE(screen.size() == 1);
  CHECK(screen[0] == ScreenEvent{"u1", 100, ScreenAction::On});
  REQUIRE(rep.errors.size() == 1);
  CHECK(rep.errors[0].kind == LineErrorKind::BadState);

  TextSource b("user_id,timestamp,broadcast_type\nu1,100,85\nu1,101,86\nu1,102,-3\n");
  const auto bc = collect<BroadcastEvent>(
      [&](const Sink<BroadcastEvent>& k) { return parse_broadcast_log(b, k, lenient()); }, &rep);
  REQUIRE(bc.size() == 3);
  CHECK(bc[0] == BroadcastEvent{"u1", 100, 85});
  CHECK(bc[1].broadcast_type == kOtherBroadcast);
  CHECK(bc[2].broadcast_type == kOtherBroadcast);
  CHECK(rep.other_broadcasts == 2);
}

TEST_CASE("app samples") {
  TextSource s("user_id,timestamp,app_id,state\nu1,50,com.maps,foreground\nu1,51,com.mail,background\n");
  const auto v = collect<AppSample>([&](const Sink<AppSample>& k) { return parse_app_log(s, k); });
  REQUIRE(v.size() == 2);
  CHECK(v[0] == AppSample{"u1", 50, "com.maps", AppState::Foreground});
  CHECK(v[1].state == AppState::Background);
}

TEST_CASE("sensor rows keep per-slot missingness") {
  TextSource t1("user_id,timestamp,s1,s2,s3,s4,s5,s6,s7,s8,s9\nu,1,1,2,3,4,5,6,7,8,9\n");
  const auto a = collect<SensorSample>(
      [&](const Sink<SensorSample>& k) { return parse_sensor_log(t1, SensorGroup::T1, k); });
  REQUIRE(a.size() == 1);
  CHECK(a[0].values.size() == 9);
  for (double v : a[0].values) CHECK_FALSE(is_missing(v));
  CHECK(a[0].values[8] == 9.0);

  std::ostringstream t2;
  t2 << "user_id,timestamp";
  for (int k = 1; k <= 150; ++k) t2 << ",s" << k;
  t2 << "\nu,2";
  for (int k = 1; k <= 150; ++k) t2 << ',' << (k == 7 ? "" : std::to_string(k));
  t2 << '\n';
  TextSource src2(t2.str());
  const auto b = collect<SensorSample>(
      [&](const Sink<SensorSample>& k) { return parse_sensor_log(src2, SensorGroup::T2, k); });
  REQUIRE(b.size() == 1);
  CHECK(is_missing(b[0].values[6]));
  CHECK(b[0].values[5] == 6.0);
}

TEST_CASE("sensor width mismatch") {
  TextSource hdr("user_id,timestamp,s1,s2,s3\nu,1,1,2,3\n");
  try {
    collect<SensorSample>(
        [&](const Sink<SensorSample>& k) { return parse_sensor_log(hdr, SensorGroup::T1, k); });
    FAIL("expected WidthMismatch");
  } catch (const IngestError& e) {
    CHECK(e.kind() == IngestError::Kind::WidthMismatch);
  }
  ParseOptions o = lenient();
  o.t1_width = 3;
  TextSource row("user_id,timestamp,s1,s2,s3\nu,1,1,2\nu,2,1,2,3\n");
  ParseReport rep;
  const auto v = collect<SensorSample>(
      [&](const Sink<SensorSample>& k) { return parse_sensor_log(row, SensorGroup::T1, k, o); }, &rep);
  CHECK(v.size() == 1);
  REQUIRE(rep.errors.size() == 1);
  CHECK(rep.errors[0].kind == LineErrorKind::WidthMismatch);
}

TEST_CASE("build_user_trace sorts, partitions and collapses") {
  TraceInputs in;
  in.battery = {test::bat("a", 30, 5), test::bat("b", 15, 9), test::bat("a", 10, 7), test::bat("a", 20, 6),
                test::bat("a", 20, 6)};
  in.screen = {{"a", 5, ScreenAction::On}, {"a", 7, ScreenAction::On}, {"a", 9, ScreenAction::Off}};
  const auto traces = build_user_trace(in);
  REQUIRE(traces.size() == 2);
  const auto& a = traces.at("a");
  REQUIRE(a.battery.size() == 3);
  CHECK(a.battery[0].timestamp == 10);
  CHECK(a.battery[1].timestamp == 20);
  CHECK(a.battery[2].timestamp == 30);
  REQUIRE(a.screen.size() == 2);
  CHECK(a.screen[0] == ScreenEvent{"a", 5, ScreenAction::On});
  CHECK(a.screen[1] == ScreenEvent{"a", 9, ScreenAction::Off});
  const auto& b = traces.at("b");
  REQUIRE(b.battery.size() == 1);
  CHECK(b.battery[0].user_id == "b");
  CHECK(build_user_trace({}).empty());
}

TEST_CASE("build_user_trace keeps equal-timestamp order stable") {
  TraceInputs in;
  in.battery = {test::bat("a", 10, 7), test::bat("a", 10, 6), test::bat("a", 5, 9)};
  const auto t = build_user_trace(in).at("a");
  REQUIRE(t.battery.size() == 3);
  CHECK(t.battery[1].level == 7);
  CHECK(t.battery[2].level == 6);
}

TEST_CASE("range queries are inclusive and exact") {
  TraceInputs in;
  for (Timestamp t : {1, 3, 3, 5, 8, 13}) in.broadcast.push_back({"u", t, static_cast<int>(t)});
  const auto trace = build_user_trace(in).at("u");
  CHECK(in_range(trace.broadcast, 3, 8).size() == 3);  // the repeated (3,3) record was a duplicate
  CHECK(in_range(trace.broadcast, 4, 4).empty());
  CHECK(in_range(trace.broadcast, 9, 2).empty());
  CHECK(in_range(trace.broadcast, 0, 100).size() == 5);
  CHECK(last_at_or_before(trace.broadcast, 7)->timestamp == 5);
  CHECK(last_at_or_before(trace.broadcast, 0) == nullptr);
}

namespace {

TraceInputs random_inputs(std::uint64_t seed, int n) {
  Rng rng(seed);
  TraceInputs in;
  const std::vector<std::string> users{"u1", "u2", "u3"};
  const std::vector<std::string> apps{"com.a", "com.b", "org.c"};
  for (int i = 0; i < n; ++i) {
    const auto& u = users[rng.below(users.size())];
    const Timestamp t = rng.between(1, 500);
    in.battery.push_back({u, t, rng.bernoulli(0.3) ? ChargeState::Charge : ChargeState::Discharge,
                          static_cast<int>(rng.between(0, 100))});
    in.screen.push_back({u, t, rng.bernoulli(0.5) ? ScreenAction::On : ScreenAction::Off});
    in.broadcast.push_back({u, t, static_cast<int>(rng.between(0, 85))});
    in.app.push_back({u, t, apps[rng.below(apps.size())],
                      rng.bernoulli(0.5) ? AppState::Foreground : AppState::Background});
    SensorSample s{u, t, SensorGroup::T1, std::vector<double>(9)};
    for (auto& v : s.values) v = rng.bernoulli(0.1) ? kMissing : std::round(rng.normal() * 100) / 8.0;
    in.t1.push_back(s);
  }
  return in;
}

}  // namespace

TEST_CASE("write then parse reproduces every stream") {
  const auto in = random_inputs(3, 400);
  std::ostringstream b, s, br, a, t;
  write_battery_log(b, in.battery);
  write_screen_log(s, in.screen);
  write_broadcast_log(br, in.broadcast);
  write_app_log(a, in.app);
  write_sensor_log(t, SensorGroup::T1, 9, in.t1);
  TextSource bs(b.str()), ss(s.str()), brs(br.str()), as(a.str()), ts(t.str());
  CHECK(collect<BatteryEntry>([&](const Sink<BatteryEntry>& k) { return parse_battery_log(bs, k); }) ==
        in.battery);
  CHECK(collect<ScreenEvent>([&](const Sink<ScreenEvent>& k) { return parse_screen_log(ss, k); }) ==
        in.screen);
  CHECK(collect<BroadcastEvent>(
            [&](const Sink<BroadcastEvent>& k) { return parse_broadcast_log(brs, k); }) == in.broadcast);
  CHECK(collect<AppSample>([&](const Sink<AppSample>& k) { return parse_app_log(as, k); }) == in.app);
  CHECK(collect<SensorSample>([&](const Sink<SensorSample>& k) {
          return parse_sensor_log(ts, SensorGroup::T1, k);
        }) == in.t1);
}

TEST_CASE("build_user_trace is idempotent") {
  const auto once = build_user_trace(random_inputs(11, 600));
  TraceInputs again;
  for (const auto& [u, t] : once) {
    again.battery.insert(again.battery.end(), t.battery.begin(), t.battery.end());
    again.screen.insert(again.screen.end(), t.screen.begin(), t.screen.end());
    again.broadcast.insert(again.broadcast.end(), t.broadcast.begin(), t.broadcast.end());
    again.app.insert(again.app.end(), t.app.begin(), t.app.end());
    again.t1.insert(again.t1.end(), t.t1.begin(), t.t1.end());
  }
  const auto twice = build_user_trace(again);
  REQUIRE(twice.size() == once.size());
  for (const auto& [u, t] : once) {
    const auto& t2 = twice.at(u);
    CHECK(t2.battery == t.battery);
    CHECK(t2.screen == t.screen);
    CHECK(t2.broadcast == t.broadcast);
    CHECK(t2.app == t.app);
    CHECK(t2.t1 == t.t1);
  }
}

TEST_CASE("trace directory with gzip and absent optional logs") {
  const auto dir = std::filesystem::temp_directory_path() / "blife_ingest_dir";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::string body = "user_id,timestamp,charge_state,level\nu,1,discharge,50\nu,2,discharge,49\n";
  gzFile gz = gzopen((dir / "battery.csv.gz").string().c_str(), "wb");
  gzwrite(gz, body.data(), static_cast<unsigned>(body.size()));
  gzclose(gz);
  std::ofstream(dir / "screen.csv") << "user_id,timestamp,action\nu,1,on\n";
  DirectoryReport rep;
  const auto in = read_trace_directory(dir, {}, &rep);
  CHECK(in.battery.size() == 2);
  CHECK(in.screen.size() == 1);
  CHECK(in.app.empty());
  CHECK(rep.battery.records == 2);
  std::filesystem::remove(dir / "battery.csv.gz");
  CHECK_THROWS(read_trace_directory(dir));
  std::filesystem::remove_all(dir);
}
