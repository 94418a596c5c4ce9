#include "blife/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "blife/query_sim.hpp"
#include "blife/rng.hpp"
#include "blife/textio.hpp"

namespace blife {

namespace fs = std::filesystem;

namespace {

// Everything needed to reproduce one stage; deliberately free of wall-clock data.
class RunManifest {
 public:
  RunManifest(std::string stage, const PipelineConfig& cfg) : stage_(std::move(stage)), cfg_(cfg) {}

  void input(const fs::path& path) { inputs_.emplace_back(path.filename().string(), file_digest(path)); }
  void count(const std::string& key, std::size_t n) { counts_.emplace_back(key, std::to_string(n)); }
  void note(const std::string& text) { notes_.push_back(text); }

  void write() const {
    fs::create_directories(cfg_.work_dir());
    std::ofstream out(cfg_.work_dir() / ("run_" + stage_ + ".txt"), std::ios::binary);
    const StageSeeds seeds(cfg_.seed());
    out << "tool = blife " << kToolVersion << '\n' << "stage = " << stage_ << '\n';
    out << "seed = " << cfg_.seed() << '\n'
        << "seed.synth = " << seeds.synth << '\n'
        << "seed.query = " << seeds.query << '\n'
        << "seed.split = " << seeds.split << '\n'
        << "seed.model = " << seeds.model << '\n'
        << "seed.bootstrap = " << seeds.bootstrap << '\n';
    out << "[inputs]\n";
    for (const auto& [k, v] : inputs_) out << k << " = " << v << '\n';
    out << "[counts]\n";
    for (const auto& [k, v] : counts_) out << k << " = " << v << '\n';
    if (!notes_.empty()) {
      out << "[notes]\n";
      for (const auto& n : notes_) out << n << '\n';
    }
    out << "[config]\n";
    std::ostringstream snap;
    cfg_.write(snap);
    out << snap.str();
  }

 private:
  std::string stage_;
  const PipelineConfig& cfg_;
  std::vector<std::pair<std::string, std::string>> inputs_, counts_;
  std::vector<std::string> notes_;
};

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  fn(out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

fs::path require(const fs::path& path, RunManifest* manifest = nullptr) {
  if (!fs::exists(path)) throw MissingArtifact("missing artifact " + path.string());
  if (manifest != nullptr) manifest->input(path);
  return path;
}

std::unique_ptr<LineSource> open_required(const fs::path& path, RunManifest& m) {
  return open_lines(require(path, &m));
}

// ---- shared loaders ----

std::map<std::string, UserTrace> load_traces(const PipelineConfig& cfg, RunManifest& m,
                                             DirectoryReport* report = nullptr) {
  const auto dir = cfg.data_dir();
  bool have_battery = false;
  for (const char* name : {LogFiles::battery, LogFiles::screen, LogFiles::broadcast, LogFiles::app,
                           LogFiles::t1, LogFiles::t2})
    for (const auto& candidate : {dir / name, dir / (std::string(name) + ".gz")})
      if (fs::exists(candidate)) {
        m.input(candidate);
        if (std::string(name) == LogFiles::battery) have_battery = true;
      }
  if (!have_battery) throw MissingArtifact("no battery log in " + dir.string());
  return build_user_trace(read_trace_directory(dir, cfg.parse_options(), report));
}

struct SessionSet {
  std::vector<Session> sessions;
  std::vector<SessionLabel> labels;
  FilterCounts counts;
};

SessionSet make_sessions(const std::map<std::string, UserTrace>& traces, const SegmentationConfig& seg) {
  SessionSet s;
  for (const auto& [user, trace] : traces) {
    FilterCounts c;
    auto kept = filter_sessions(segment_sessions(trace, seg), seg, {}, &c);
    s.counts.input += c.input;
    s.counts.after_duration += c.after_duration;
    s.counts.after_start_battery += c.after_start_battery;
    for (auto& session : kept) {
      s.labels.push_back(label_session(session, seg));
      s.sessions.push_back(std::move(session));
    }
  }
  return s;
}

constexpr const char* kQueryHeader =
    "query_id,session_id,user_id,t_start,t_query,outcome_kind,outcome_minutes";

void write_queries(std::ostream& out, std::span<const QueryInstance> qs) {
  out << kQueryHeader << '\n';
  for (const auto& q : qs)
    out << q.id << ',' << q.session_id << ',' << q.user_id << ',' << q.t_start << ',' << q.t_query
        << ',' << (q.outcome.observed() ? "life" : "censored_at_least") << ','
        << format_double(q.outcome.minutes) << '\n';
}

std::vector<QueryInstance> read_queries(LineSource& in) {
  std::string line;
  if (!in.next(line) || line != kQueryHeader) throw std::runtime_error("queries file: bad header");
  std::vector<QueryInstance> out;
  std::vector<std::string_view> f;
  while (in.next(line)) {
    if (line.empty()) continue;
    split_fields(line, f);
    if (f.size() != 7) throw std::runtime_error("queries file: bad row `" + line + "`");
    QueryInstance q;
    q.id = std::string(f[0]);
    q.session_id = std::string(f[1]);
    q.user_id = std::string(f[2]);
    const auto ts = parse_int(f[3]);
    const auto tq = parse_int(f[4]);
    const auto m = parse_double(f[6]);
    if (!ts || !tq || !m || (f[5] != "life" && f[5] != "censored_at_least"))
      throw std::runtime_error("queries file: bad row `" + line + "`");
    q.t_start = *ts;
    q.t_query = *tq;
    q.outcome = {f[5] == "life" ? OutcomeKind::Life : OutcomeKind::CensoredAtLeast, *m};
    out.push_back(std::move(q));
  }
  return out;
}

struct FeatureArtifacts {
  FeatureSchema schema;
  Preprocessor pre;
};

FeatureArtifacts load_feature_artifacts(const PipelineConfig& cfg, RunManifest& m) {
  const auto work = cfg.work_dir();
  auto schema_src = open_required(work / "schema.txt", m);
  auto pre_src = open_required(work / "preprocessor.txt", m);
  return {FeatureSchema::read(*schema_src), Preprocessor::read(*pre_src)};
}

Eigen::MatrixXd load_matrix(const fs::path& path, const FeatureSchema& schema, RunManifest& m) {
  auto src = open_required(path, m);
  std::vector<std::string> names;
  auto X = read_feature_matrix(*src, &names);
  if (names != schema.column_names()) throw SchemaMismatch(path.string() + " does not match the schema");
  return X;
}

std::uint64_t experiment_fingerprint(const FeatureSchema& schema, const PipelineConfig::Experiment& e) {
  return fnv1a64(e.feature_expr, schema.fingerprint());
}

std::vector<PredictionRecord> load_predictions(const PipelineConfig& cfg, const std::string& name,
                                               RunManifest& m) {
  auto src = open_required(cfg.work_dir() / "predictions" / (name + ".csv"), m);
  return read_predictions(*src);
}

// ---- stages ----

void stage_synth(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("synth", cfg);
  const auto scfg = cfg.synth();
  const auto world = generate_world(scfg, cfg.regimes());
  write_world(cfg.data_dir(), world, scfg);
  m.count("users", world.users.size());
  m.count("battery_entries", world.inputs.battery.size());
  m.count("manifest_events", world.manifest.events.size());
  m.write();
  out << "synth: " << world.users.size() << " users, " << world.inputs.battery.size()
      << " battery entries -> " << cfg.data_dir().string() << '\n';
}

void write_parse_report(std::ostream& out, const char* name, const ParseReport& r) {
  out << name << ".data_lines = " << r.data_lines << '\n'
      << name << ".records = " << r.records << '\n'
      << name << ".errors = " << r.error_count << '\n'
      << name << ".other_broadcasts = " << r.other_broadcasts << '\n';
  for (const auto& e : r.errors)
    out << name << ".error = line " << e.line << ": " << to_string(e.kind) << ": " << e.text << '\n';
}

void stage_ingest(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("ingest", cfg);
  DirectoryReport rep;
  const auto traces = load_traces(cfg, m, &rep);
  write_file(cfg.work_dir() / "ingest_report.txt", [&](std::ostream& o) {
    o << "users = " << traces.size() << '\n';
    write_parse_report(o, "battery", rep.battery);
    write_parse_report(o, "screen", rep.screen);
    write_parse_report(o, "broadcast", rep.broadcast);
    write_parse_report(o, "app", rep.app);
    write_parse_report(o, "t1", rep.t1);
    write_parse_report(o, "t2", rep.t2);
  });
  m.count("users", traces.size());
  m.count("battery_records", rep.battery.records);
  m.count("line_errors", rep.battery.error_count + rep.screen.error_count + rep.broadcast.error_count +
                             rep.app.error_count + rep.t1.error_count + rep.t2.error_count);
  m.write();
  out << "ingest: " << traces.size() << " users, " << rep.battery.records << " battery entries\n";
}

void stage_sessionize(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("sessionize", cfg);
  const auto seg = cfg.segmentation();
  const auto s = make_sessions(load_traces(cfg, m), seg);
  write_file(cfg.work_dir() / "sessions.csv",
             [&](std::ostream& o) { write_sessions_csv(o, s.sessions, s.labels); });
  const auto observed = static_cast<std::size_t>(
      std::count_if(s.labels.begin(), s.labels.end(), [](const SessionLabel& l) { return l.observed; }));
  m.count("segments", s.counts.input);
  m.count("after_duration_filter", s.counts.after_duration);
  m.count("after_start_battery_filter", s.counts.after_start_battery);
  m.count("observed", observed);
  m.count("censored", s.sessions.size() - observed);
  m.write();
  out << "sessionize: " << s.counts.input << " segments, " << s.sessions.size() << " kept ("
      << observed << " observed, " << s.sessions.size() - observed << " censored)\n";
}

void stage_stats(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("stats", cfg);
  const auto s = make_sessions(load_traces(cfg, m), cfg.segmentation());
  if (s.sessions.empty()) throw std::runtime_error("stats: no sessions");
  const auto cdfs = empirical_cdfs(s.sessions);
  const auto dir = cfg.work_dir() / "stats";
  write_file(dir / "duration_cdf.csv", [&](std::ostream& o) { write_cdf_csv(o, cdfs.duration, "hours"); });
  write_file(dir / "begin_level_cdf.csv", [&](std::ostream& o) { write_cdf_csv(o, cdfs.begin_level, "level"); });
  write_file(dir / "end_level_cdf.csv", [&](std::ostream& o) { write_cdf_csv(o, cdfs.end_level, "level"); });
  write_file(dir / "consumption_cdf.csv",
             [&](std::ostream& o) { write_cdf_csv(o, cdfs.consumption, "percent"); });
  const auto observed = static_cast<std::size_t>(
      std::count_if(s.labels.begin(), s.labels.end(), [](const SessionLabel& l) { return l.observed; }));
  m.count("sessions", s.sessions.size());
  m.count("observed", observed);
  m.write();
  out << "stats: " << s.sessions.size() << " sessions, observed fraction "
      << format_double(static_cast<double>(observed) / static_cast<double>(s.sessions.size())) << '\n';
}

void stage_simulate(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("simulate", cfg);
  const StageSeeds seeds(cfg.seed());
  const auto s = make_sessions(load_traces(cfg, m), cfg.segmentation());
  const auto queries = simulate_queries(s.sessions, s.labels, seeds.query, cfg.queries_per_session());
  const auto split = stratified_session_split(queries, cfg.test_fraction(), seeds.split);
  const auto work = cfg.work_dir();
  write_file(work / "split.csv", [&](std::ostream& o) { write_split_manifest(o, split); });
  write_file(work / "queries_train.csv", [&](std::ostream& o) { write_queries(o, split.train); });
  write_file(work / "queries_test.csv", [&](std::ostream& o) { write_queries(o, split.test); });
  for (const auto& w : split.warnings) {
    m.note("warning: " + w);
    out << "simulate: warning: " << w << '\n';
  }
  m.count("sessions", s.sessions.size());
  m.count("queries", queries.size());
  m.count("train", split.train.size());
  m.count("test", split.test.size());
  m.write();
  out << "simulate: " << queries.size() << " queries, " << split.train.size() << " train / "
      << split.test.size() << " test\n";
}

void stage_featurize(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("featurize", cfg);
  const auto work = cfg.work_dir();
  auto train_src = open_required(work / "queries_train.csv", m);
  auto test_src = open_required(work / "queries_test.csv", m);
  const auto train = read_queries(*train_src);
  const auto test = read_queries(*test_src);
  const auto traces = load_traces(cfg, m);
  const auto s = make_sessions(traces, cfg.segmentation());
  const auto fcfg = cfg.features();
  const auto history = UserHistoryIndex::build(s.sessions, traces, fcfg.utc_offset);
  std::vector<std::string> warnings;
  const auto schema = build_schema(fcfg, traces, train, &warnings);
  const auto Xtr = extract_feature_matrix(schema, train, traces, history);
  const auto Xte = extract_feature_matrix(schema, test, traces, history);
  const auto pre = fit_preprocessor(Xtr);
  write_file(work / "schema.txt", [&](std::ostream& o) { schema.write(o); });
  write_file(work / "preprocessor.txt", [&](std::ostream& o) { pre.write(o); });
  write_file(work / "features_train.csv",
             [&](std::ostream& o) { write_feature_matrix(o, schema.column_names(), Xtr); });
  write_file(work / "features_test.csv",
             [&](std::ostream& o) { write_feature_matrix(o, schema.column_names(), Xte); });
  write_file(work / "labels_train.csv", [&](std::ostream& o) { write_labels(o, train); });
  write_file(work / "labels_test.csv", [&](std::ostream& o) { write_labels(o, test); });
  for (const auto& w : warnings) {
    m.note("warning: " + w);
    out << "featurize: warning: " << w << '\n';
  }
  m.count("width", static_cast<std::size_t>(schema.width()));
  m.count("train_rows", train.size());
  m.count("test_rows", test.size());
  m.write();
  out << "featurize: width " << schema.width() << ", " << train.size() << " train rows, "
      << test.size() << " test rows\n";
}

void stage_train(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("train", cfg);
  const auto work = cfg.work_dir();
  const auto art = load_feature_artifacts(cfg, m);
  const auto X = apply_preprocessor(art.pre, load_matrix(work / "features_train.csv", art.schema, m));
  auto q_src = open_required(work / "queries_train.csv", m);
  const auto queries = read_queries(*q_src);
  if (static_cast<Eigen::Index>(queries.size()) != X.rows())
    throw SchemaMismatch("train features and queries differ in length");
  std::vector<int> rows;
  for (std::size_t i = 0; i < queries.size(); ++i)
    if (queries[i].outcome.observed()) rows.push_back(static_cast<int>(i));
  if (rows.empty()) throw std::runtime_error("train: no observed training rows");
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k)
    y[static_cast<Eigen::Index>(k)] = queries[static_cast<std::size_t>(rows[k])].outcome.minutes;
  const auto Xobs = X(rows, Eigen::all).eval();

  for (const auto& e : cfg.experiments()) {
    const auto cols = art.schema.columns(e.groups);
    auto mcfg = cfg.model(e.model);
    mcfg.seed = derive_seed(mcfg.seed, e.name());
    const auto model = fit_model(select_columns(Xobs, cols), y, mcfg, experiment_fingerprint(art.schema, e));
    write_file(work / "models" / (e.name() + ".model"), [&](std::ostream& o) { model.save(o); });
    out << "train: " << e.name() << " (" << cols.size() << " columns, " << rows.size() << " rows)\n";
  }
  m.count("observed_rows", rows.size());
  m.count("experiments", cfg.experiments().size());
  m.write();
}

void stage_predict(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("predict", cfg);
  const auto work = cfg.work_dir();
  const auto art = load_feature_artifacts(cfg, m);
  const auto X = apply_preprocessor(art.pre, load_matrix(work / "features_test.csv", art.schema, m));
  auto q_src = open_required(work / "queries_test.csv", m);
  const auto queries = read_queries(*q_src);
  if (static_cast<Eigen::Index>(queries.size()) != X.rows())
    throw SchemaMismatch("test features and queries differ in length");
  for (const auto& e : cfg.experiments()) {
    const auto path = require(work / "models" / (e.name() + ".model"), &m);
    std::ifstream in(path);
    const auto model = TrainedModel::load(in);
    const auto cols = art.schema.columns(e.groups);
    const auto pred = model.predict(select_columns(X, cols), experiment_fingerprint(art.schema, e));
    std::vector<PredictionRecord> recs;
    for (std::size_t i = 0; i < queries.size(); ++i)
      recs.push_back({queries[i].id, pred[static_cast<Eigen::Index>(i)], queries[i].outcome});
    write_file(work / "predictions" / (e.name() + ".csv"),
               [&](std::ostream& o) { write_predictions(o, recs); });
  }
  m.count("test_rows", queries.size());
  m.write();
  out << "predict: " << cfg.experiments().size() << " experiments on " << queries.size()
      << " test queries\n";
}

double metric_or_nan(Metric metric, std::span<const PredictionRecord> recs) {
  try {
    return metric_value(metric, recs);
  } catch (const MetricError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

void stage_evaluate(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("evaluate", cfg);
  const auto variant = cfg.c_index_variant();
  const auto cmetric = variant == CIndexVariant::Paper ? Metric::CIndexPaper : Metric::CIndexHarrell;
  std::ostringstream table;
  table << "feature_set,model,rmse,tau,c_index,c_index_variant,n_observed,n_censored\n";
  out << std::left << std::setw(22) << "feature_set" << std::setw(8) << "model" << std::right
      << std::setw(10) << "rmse" << std::setw(9) << "tau" << std::setw(9) << "c_index"
      << std::setw(7) << "n_obs" << std::setw(7) << "n_cens" << '\n';
  for (const auto& e : cfg.experiments()) {
    const auto recs = load_predictions(cfg, e.name(), m);
    std::size_t obs = 0;
    for (const auto& r : recs) obs += r.outcome.observed() ? 1 : 0;
    const double r = metric_or_nan(Metric::Rmse, recs);
    const double t = metric_or_nan(Metric::Tau, recs);
    const double c = metric_or_nan(cmetric, recs);
    // expressions like F1,F10-F12 carry commas
    if (e.feature_expr.find(',') != std::string::npos)
      table << '"' << e.feature_expr << '"';
    else
      table << e.feature_expr;
    table << ',' << to_string(e.model) << ',' << format_double(r) << ','
          << format_double(t) << ',' << format_double(c) << ',' << to_string(variant) << ',' << obs
          << ',' << recs.size() - obs << '\n';
    out << std::left << std::setw(22) << e.feature_expr << std::setw(8) << to_string(e.model)
        << std::right << std::fixed << std::setprecision(2) << std::setw(10) << r
        << std::setprecision(4) << std::setw(9) << t << std::setw(9) << c << std::setw(7) << obs
        << std::setw(7) << recs.size() - obs << '\n'
        << std::defaultfloat;
  }
  write_file(cfg.work_dir() / "metrics.csv", [&](std::ostream& o) { o << table.str(); });
  m.count("experiments", cfg.experiments().size());
  m.write();
}

void stage_bootstrap(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("bootstrap", cfg);
  const auto exps = cfg.experiments();
  std::string a = cfg.get("bootstrap_a"), b = cfg.get("bootstrap_b");
  if (a.empty() || b.empty()) {
    if (exps.size() < 2) throw ConfigInvalid("bootstrap needs two experiments (bootstrap_a, bootstrap_b)");
    if (a.empty()) a = exps[exps.size() - 1].name();
    if (b.empty()) b = exps[exps.size() - 2].name();
  }
  const auto ra = load_predictions(cfg, a, m);
  const auto rb = load_predictions(cfg, b, m);
  const auto metric = cfg.bootstrap_metric();
  const auto res = bootstrap_shift_test(ra, rb, metric, cfg.bootstrap_replicates(),
                                        StageSeeds(cfg.seed()).bootstrap, cfg.threads());
  write_file(cfg.work_dir() / "bootstrap.txt", [&](std::ostream& o) {
    o << "a = " << a << '\n' << "b = " << b << '\n';
    write_bootstrap_result(o, res, metric);
  });
  m.count("replicates", res.replicate_deltas.size());
  m.write();
  out << "bootstrap: " << a << " vs " << b << ": delta " << format_double(res.observed_delta)
      << ", p = " << format_double(res.p_value) << '\n';
}

void stage_stability(const PipelineConfig& cfg, std::ostream& out) {
  RunManifest m("stability", cfg);
  const auto work = cfg.work_dir();
  const auto art = load_feature_artifacts(cfg, m);
  auto q_src = open_required(work / "queries_train.csv", m);
  const auto queries = read_queries(*q_src);
  const auto X = apply_preprocessor(art.pre, load_matrix(work / "features_train.csv", art.schema, m));

  const auto s = make_sessions(load_traces(cfg, m), cfg.segmentation());
  std::map<std::string, const Session*> by_id;
  for (const auto& session : s.sessions) by_id.emplace(session.id(), &session);

  StabilityInput input;
  std::vector<int> rows;
  std::map<std::string, bool> seen;
  std::size_t skipped = 0, censored = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    if (seen[q.session_id]) continue;  // first query of each session
    if (!q.outcome.observed()) {
      // no life to learn or rank; keep quintiles over sessions that can be scored
      seen[q.session_id] = true;
      ++censored;
      continue;
    }
    seen[q.session_id] = true;
    const auto it = by_id.find(q.session_id);
    if (it == by_id.end()) throw SchemaMismatch("query names unknown session " + q.session_id);
    try {
      input.variance.push_back(session_stability_variance(*it->second));
    } catch (const MetricError&) {
      ++skipped;
      continue;
    }
    input.session_ids.push_back(q.session_id);
    input.outcomes.push_back(q.outcome);
    rows.push_back(static_cast<int>(i));
  }
  input.features = X(rows, Eigen::all);

  std::vector<std::vector<int>> sets;
  for (const auto& groups : cfg.stability_sets()) sets.push_back(art.schema.columns(groups));
  auto mcfg = cfg.model(parse_model_kind(cfg.get("stability_model")));
  mcfg.seed = derive_seed(mcfg.seed, "stability");
  const auto rep = stability_experiment(input, mcfg, sets);

  const auto last = sets.size() - 1;
  write_file(work / "stability.csv", [&](std::ostream& o) {
    o << "group,sessions";
    for (std::size_t k = 0; k < sets.size(); ++k) o << ",tau_set" << k + 1;
    o << ",gain_last\n";
    for (std::size_t g = 0; g < rep.tau.size(); ++g) {
      o << g << ',' << rep.group_sizes[g];
      for (double t : rep.tau[g]) o << ',' << format_double(t);
      o << ',' << format_double(rep.tau[g][last] - rep.tau[g][last - 1]) << '\n';
    }
  });
  m.count("sessions", input.session_ids.size());
  m.count("skipped_low_consumption", skipped);
  m.count("skipped_censored", censored);
  m.write();
  out << "stability: " << input.session_ids.size() << " training sessions in 5 groups\n";
  for (std::size_t g = 0; g < rep.tau.size(); ++g) {
    out << "  group " << g << ": tau";
    for (double t : rep.tau[g]) out << ' ' << format_double(t);
    out << '\n';
  }
}

using StageFn = void (*)(const PipelineConfig&, std::ostream&);

const std::vector<std::pair<std::string, StageFn>>& stage_table() {
  static const std::vector<std::pair<std::string, StageFn>> t = {
      {"synth", stage_synth},         {"ingest", stage_ingest},     {"sessionize", stage_sessionize},
      {"stats", stage_stats},         {"simulate", stage_simulate}, {"featurize", stage_featurize},
      {"train", stage_train},         {"predict", stage_predict},   {"evaluate", stage_evaluate},
      {"bootstrap", stage_bootstrap}, {"stability", stage_stability},
  };
  return t;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, fn] : stage_table()) n.push_back(name);
    return n;
  }();
  return names;
}

void run_stage(const std::string& stage, const PipelineConfig& cfg, std::ostream& out) {
  if (stage == "all") {
    const bool paired = cfg.experiments().size() >= 2;
    for (const auto& [name, fn] : stage_table()) {
      if (name == "bootstrap" && !paired) {
        out << "bootstrap: skipped, needs two experiments\n";
        continue;
      }
      fn(cfg, out);
    }
    return;
  }
  for (const auto& [name, fn] : stage_table())
    if (name == stage) return fn(cfg, out);
  throw ConfigInvalid("unknown stage `" + stage + "`");
}

namespace {

// "--key value" / "--key=value" pairs left over after CLI11 parsing.
void apply_overrides(const std::vector<std::string>& extras, PipelineConfig& cfg) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.size() < 3) throw ConfigInvalid("unexpected argument `" + tok + "`");
    const auto eq = tok.find('=');
    if (eq != std::string::npos) {
      cfg.set(tok.substr(2, eq - 2), tok.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw ConfigInvalid("flag `" + tok + "` needs a value");
      cfg.set(tok.substr(2), extras[++i]);
    }
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Censoring-aware battery-life prediction toolkit", "blife"};
  app.set_version_flag("--version", std::string("blife ") + kToolVersion);
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> names = stage_names();
  names.push_back("all");
  for (const auto& name : names) {
    auto* sub = app.add_subcommand(name, name == "all" ? "run every stage in order" : "run the " + name + " stage");
    sub->add_option("-c,--config", config_path, "config file (key = value with [sections])");
    sub->allow_extras();
    sub->footer("Any config key can be overridden with --<key> <value>.");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  CLI::App* sub = app.get_subcommands().front();
  PipelineConfig cfg;
  try {
    if (!config_path.empty()) cfg = PipelineConfig::load(config_path);
    apply_overrides(sub->remaining(), cfg);
    cfg.validate();
  } catch (const std::exception& e) {
    err << "blife: " << e.what() << '\n' << sub->help();
    return 1;
  }
  try {
    run_stage(sub->get_name(), cfg, out);
  } catch (const ConfigInvalid& e) {
    err << "blife: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "blife: " << sub->get_name() << ": " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace blife
