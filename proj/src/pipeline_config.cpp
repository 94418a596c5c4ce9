#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "blife/pipeline.hpp"
#include "blife/rng.hpp"
#include "blife/textio.hpp"

namespace blife {

namespace {

struct KeyDef {
  const char* section;
  const char* key;
  const char* value;
};

// Order here is the order of the canonical dump.
constexpr KeyDef kKeys[] = {
    {"general", "seed", "1"},
    {"general", "threads", "1"},
    {"paths", "data_dir", "data"},
    {"paths", "work_dir", "work"},
    {"synth", "n_users", "4"},
    {"synth", "days", "7"},
    {"synth", "start_epoch", "1425168000"},
    {"synth", "regimes", "two_regime"},
    {"synth", "rate", "0.5"},
    {"synth", "battery_period", "5"},
    {"synth", "t1_period", "60"},
    {"synth", "t2_period", "15"},
    {"synth", "step_seconds", "60"},
    {"synth", "start_level", "100"},
    {"synth", "charge_threshold_lo", "5"},
    {"synth", "charge_threshold_hi", "45"},
    {"synth", "charge_hours", ""},
    {"synth", "charge_rate", "2"},
    {"synth", "charge_to", "100"},
    {"synth", "broadcast_prob", "0.3"},
    {"synth", "n_apps", "80"},
    {"synth", "sensor_noise", "1"},
    {"synth", "sensor_missing_prob", "0.01"},
    {"ingest", "max_error_rate", "0.01"},
    {"sessionize", "gap_threshold", "600"},
    {"sessionize", "min_duration", "3600"},
    {"sessionize", "min_start_battery", "30"},
    {"sessionize", "threshold_L", "20"},
    {"simulate", "test_fraction", "1/6"},
    {"simulate", "queries_per_session", "1"},
    {"features", "top_k_apps", "50"},
    {"features", "n_broadcast_types", "86"},
    {"features", "t1_width", "9"},
    {"features", "t2_width", "150"},
    {"features", "max_users", "51"},
    {"features", "utc_offset", "0"},
    {"train", "feature_sets", "F1; F1,F10-F12; F1-F18; F1-F21"},
    {"train", "models", "linear, boost"},
    {"train", "n_estimators", "100"},
    {"train", "learning_rate", "0.1"},
    {"train", "max_depth", "0"},
    {"train", "min_samples_leaf", "5"},
    {"train", "subsample", "1"},
    {"train", "feature_fraction", "1"},
    {"train", "l2_reg", "1"},
    {"train", "ridge", "1e-8"},
    {"train", "bootstrap_rows", "true"},
    {"evaluate", "c_index_variant", "paper"},
    {"evaluate", "bootstrap_replicates", "10000"},
    {"evaluate", "bootstrap_metric", "c_index"},
    {"evaluate", "bootstrap_a", ""},
    {"evaluate", "bootstrap_b", ""},
    {"evaluate", "stability_sets", "F1-F4; F1-F18; F1-F21"},
    {"evaluate", "stability_model", "boost"},
};

const KeyDef* find_key(const std::string& key) {
  for (const auto& d : kKeys)
    if (key == d.key) return &d;
  return nullptr;
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    auto t = trim(cur);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

int parse_group(std::string_view tok, const std::string& expr) {
  if (tok.size() < 2 || tok[0] != 'F') throw BadGroupId("bad feature group `" + std::string(tok) + "` in `" + expr + "`");
  const auto v = parse_int(tok.substr(1));
  if (!v || *v < 1 || *v > kNumGroups)
    throw BadGroupId("feature group `" + std::string(tok) + "` is not in F1..F21");
  return static_cast<int>(*v);
}

}  // namespace

std::vector<int> feature_set_parse(const std::string& expr) {
  std::vector<int> out;
  auto push = [&](int g) {
    if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
  };
  for (const auto& tok : split_list(expr, ',')) {
    const auto dash = tok.find('-');
    if (dash == std::string::npos) {
      push(parse_group(tok, expr));
      continue;
    }
    const int a = parse_group(trim(std::string_view(tok).substr(0, dash)), expr);
    const int b = parse_group(trim(std::string_view(tok).substr(dash + 1)), expr);
    if (b < a) throw BadGroupId("descending range `" + tok + "`");
    for (int g = a; g <= b; ++g) push(g);
  }
  if (out.empty()) throw BadGroupId("empty feature set `" + expr + "`");
  return out;
}

PipelineConfig::PipelineConfig() {
  for (const auto& d : kKeys) values_[d.key] = d.value;
}

PipelineConfig PipelineConfig::parse(std::istream& in, const std::string& origin) {
  PipelineConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const auto body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto where = origin + ":" + std::to_string(lineno);
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigInvalid(where + ": bad section header");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigInvalid(where + ": expected `key = value`");
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto* def = find_key(key);
    if (def == nullptr) throw ConfigInvalid(where + ": unknown key `" + key + "`");
    if (!section.empty() && section != def->section)
      throw ConfigInvalid(where + ": key `" + key + "` belongs in [" + def->section + "]");
    cfg.values_[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot read config file " + path.string());
  return parse(in, path.string());
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  if (find_key(key) == nullptr) throw ConfigInvalid("unknown key `" + key + "`");
  values_[key] = trim(value);
}

const std::string& PipelineConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigInvalid("unknown key `" + key + "`");
  return it->second;
}

void PipelineConfig::write(std::ostream& out) const {
  std::string section;
  for (const auto& d : kKeys) {
    if (section != d.section) {
      section = d.section;
      out << '[' << section << "]\n";
    }
    out << d.key << " = " << get(d.key) << '\n';
  }
}

namespace {

double as_double(const PipelineConfig& c, const char* key) {
  const auto& s = c.get(key);
  const auto slash = s.find('/');
  if (slash != std::string::npos) {
    const auto a = parse_double(trim(std::string_view(s).substr(0, slash)));
    const auto b = parse_double(trim(std::string_view(s).substr(slash + 1)));
    if (a && b && *b != 0.0) return *a / *b;
  } else if (const auto v = parse_double(s)) {
    return *v;
  }
  throw ConfigInvalid(std::string("`") + key + "` is not a number: `" + s + "`");
}

std::int64_t as_int(const PipelineConfig& c, const char* key) {
  const auto v = parse_int(c.get(key));
  if (!v) throw ConfigInvalid(std::string("`") + key + "` is not an integer: `" + c.get(key) + "`");
  return *v;
}

int as_int32(const PipelineConfig& c, const char* key) {
  const auto v = as_int(c, key);
  if (v < -2147483647 || v > 2147483647) throw ConfigInvalid(std::string("`") + key + "` out of range");
  return static_cast<int>(v);
}

bool as_bool(const PipelineConfig& c, const char* key) {
  const auto& s = c.get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigInvalid(std::string("`") + key + "` is not a boolean: `" + s + "`");
}

}  // namespace

std::uint64_t PipelineConfig::seed() const {
  const auto& s = get("seed");
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigInvalid("`seed` must be an unsigned integer");
  return v;
}

int PipelineConfig::threads() const {
  const int t = as_int32(*this, "threads");
  if (t < 1) throw ConfigInvalid("`threads` must be >= 1");
  return t;
}

SynthConfig PipelineConfig::synth() const {
  SynthConfig s;
  s.n_users = as_int32(*this, "n_users");
  s.days = as_int32(*this, "days");
  s.start_epoch = as_int(*this, "start_epoch");
  s.utc_offset = as_int(*this, "utc_offset");
  s.battery_period = as_int32(*this, "battery_period");
  s.t1_period = as_int32(*this, "t1_period");
  s.t2_period = as_int32(*this, "t2_period");
  s.step_seconds = as_int32(*this, "step_seconds");
  s.start_level = as_double(*this, "start_level");
  s.charge_threshold_lo = as_double(*this, "charge_threshold_lo");
  s.charge_threshold_hi = as_double(*this, "charge_threshold_hi");
  for (const auto& h : split_list(get("charge_hours"), ',')) {
    const auto v = parse_int(h);
    if (!v) throw ConfigInvalid("`charge_hours` must list integers");
    s.charge_hours.push_back(static_cast<int>(*v));
  }
  s.charge_rate = as_double(*this, "charge_rate");
  s.charge_to = as_double(*this, "charge_to");
  s.broadcast_prob = as_double(*this, "broadcast_prob");
  s.n_broadcast_types = as_int32(*this, "n_broadcast_types");
  s.n_apps = as_int32(*this, "n_apps");
  s.t1_width = as_int32(*this, "t1_width");
  s.t2_width = as_int32(*this, "t2_width");
  s.sensor_noise = as_double(*this, "sensor_noise");
  s.sensor_missing_prob = as_double(*this, "sensor_missing_prob");
  s.seed = StageSeeds(seed()).synth;
  s.threads = threads();
  return s;
}

RegimeModel PipelineConfig::regimes() const {
  return RegimeModel::preset(get("regimes"), as_double(*this, "rate"));
}

SegmentationConfig PipelineConfig::segmentation() const {
  SegmentationConfig s;
  s.gap_threshold = as_int(*this, "gap_threshold");
  s.min_duration = as_int(*this, "min_duration");
  s.min_start_battery = as_int32(*this, "min_start_battery");
  s.threshold_L = as_int32(*this, "threshold_L");
  return s;
}

FeatureConfig PipelineConfig::features() const {
  FeatureConfig f;
  f.top_k_apps = as_int32(*this, "top_k_apps");
  f.n_broadcast_types = as_int32(*this, "n_broadcast_types");
  f.t1_width = as_int32(*this, "t1_width");
  f.t2_width = as_int32(*this, "t2_width");
  f.n_users = as_int32(*this, "max_users");
  f.utc_offset = as_int(*this, "utc_offset");
  return f;
}

ParseOptions PipelineConfig::parse_options() const {
  ParseOptions p;
  p.max_error_rate = as_double(*this, "max_error_rate");
  p.n_broadcast_types = as_int32(*this, "n_broadcast_types");
  p.t1_width = as_int32(*this, "t1_width");
  p.t2_width = as_int32(*this, "t2_width");
  return p;
}

ModelConfig PipelineConfig::model(ModelKind kind) const {
  ModelConfig m;
  m.kind = kind;
  m.n_estimators = as_int32(*this, "n_estimators");
  m.learning_rate = as_double(*this, "learning_rate");
  m.max_depth = as_int32(*this, "max_depth");
  m.min_samples_leaf = as_int32(*this, "min_samples_leaf");
  m.subsample = as_double(*this, "subsample");
  m.feature_fraction = as_double(*this, "feature_fraction");
  m.l2_reg = as_double(*this, "l2_reg");
  m.ridge = as_double(*this, "ridge");
  m.bootstrap = as_bool(*this, "bootstrap_rows");
  m.seed = StageSeeds(seed()).model;
  m.threads = threads();
  return m;
}

double PipelineConfig::test_fraction() const { return as_double(*this, "test_fraction"); }

int PipelineConfig::queries_per_session() const { return as_int32(*this, "queries_per_session"); }

CIndexVariant PipelineConfig::c_index_variant() const {
  const auto& v = get("c_index_variant");
  if (v == "paper") return CIndexVariant::Paper;
  if (v == "harrell") return CIndexVariant::Harrell;
  throw ConfigInvalid("`c_index_variant` must be paper or harrell");
}

int PipelineConfig::bootstrap_replicates() const { return as_int32(*this, "bootstrap_replicates"); }

Metric PipelineConfig::bootstrap_metric() const {
  try {
    return parse_metric(get("bootstrap_metric"));
  } catch (const std::invalid_argument& e) {
    throw ConfigInvalid(e.what());
  }
}

std::vector<std::vector<int>> PipelineConfig::stability_sets() const {
  std::vector<std::vector<int>> out;
  for (const auto& expr : split_list(get("stability_sets"), ';')) out.push_back(feature_set_parse(expr));
  return out;
}

std::string PipelineConfig::Experiment::name() const {
  std::string s;
  for (char c : feature_expr)
    if (c != ' ') s.push_back(c == ',' ? '_' : c);
  return s + "__" + to_string(model);
}

std::vector<PipelineConfig::Experiment> PipelineConfig::experiments() const {
  std::vector<Experiment> out;
  const auto sets = split_list(get("feature_sets"), ';');
  const auto models = split_list(get("models"), ',');
  if (sets.empty() || models.empty()) throw ConfigInvalid("no experiments configured");
  for (const auto& expr : sets) {
    const auto groups = feature_set_parse(expr);
    for (const auto& m : models) {
      ModelKind kind;
      try {
        kind = parse_model_kind(m);
      } catch (const std::invalid_argument& e) {
        throw ConfigInvalid(e.what());
      }
      std::string compact;
      for (char c : expr)
        if (c != ' ') compact.push_back(c);
      out.push_back({compact, groups, kind});
    }
  }
  return out;
}

void PipelineConfig::validate() const {
  (void)seed();
  (void)threads();
  try {
    synth().validate();
    regimes().validate();
    segmentation().validate();
    for (const auto& e : experiments()) model(e.model).validate();
  } catch (const ConfigInvalid&) {
    throw;
  } catch (const BadGroupId&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigInvalid(e.what());
  }
  (void)features();
  (void)parse_options();
  const double f = test_fraction();
  if (!(f > 0.0 && f < 1.0)) throw ConfigInvalid("`test_fraction` must be in (0, 1)");
  if (queries_per_session() < 1) throw ConfigInvalid("`queries_per_session` must be >= 1");
  (void)c_index_variant();
  if (bootstrap_replicates() < 1) throw ConfigInvalid("`bootstrap_replicates` must be >= 1");
  (void)bootstrap_metric();
  if (stability_sets().size() < 2) throw ConfigInvalid("`stability_sets` needs at least two sets");
  try {
    (void)parse_model_kind(get("stability_model"));
  } catch (const std::invalid_argument& e) {
    throw ConfigInvalid(e.what());
  }
}

StageSeeds::StageSeeds(std::uint64_t master)
    : synth(derive_seed(master, "synth")),
      query(derive_seed(master, "query")),
      split(derive_seed(master, "split")),
      model(derive_seed(master, "model")),
      bootstrap(derive_seed(master, "bootstrap")) {}

}  // namespace blife
