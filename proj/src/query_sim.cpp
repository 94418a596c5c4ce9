#include "blife/query_sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace blife {

namespace {

Timestamp upper_bound_time(const Session& s, const SessionLabel& label) {
  return label.observed ? label.t_event : s.t_end;
}

const char* outcome_name(OutcomeKind k) {
  return k == OutcomeKind::Life ? "life" : "censored_at_least";
}

}  // namespace

std::optional<Timestamp> sample_query_time(const Session& session, const SessionLabel& label,
                                           Rng& rng) {
  const Timestamp lo = session.t_start + kQueryBorder;
  const Timestamp hi = upper_bound_time(session, label) - kQueryBorder;
  if (hi < lo) return std::nullopt;
  return rng.between(lo, hi);
}

QueryInstance make_query_instance(const Session& session, const SessionLabel& label,
                                  Timestamp t_query) {
  const Timestamp u = upper_bound_time(session, label);
  if (t_query < session.t_start + kQueryBorder || t_query > u - kQueryBorder)
    throw WindowViolation("query time " + std::to_string(t_query) + " outside window of " +
                          session.id());
  QueryInstance q;
  q.session_id = session.id();
  q.user_id = session.user_id;
  q.t_start = session.t_start;
  q.t_query = t_query;
  q.outcome.kind = label.observed ? OutcomeKind::Life : OutcomeKind::CensoredAtLeast;
  q.outcome.minutes = static_cast<double>(u - t_query) / 60.0;
  q.id = q.session_id + "#0";
  return q;
}

std::vector<QueryInstance> simulate_queries(std::span<const Session> sessions,
                                            std::span<const SessionLabel> labels,
                                            std::uint64_t seed, int per_session) {
  if (sessions.size() != labels.size())
    throw std::invalid_argument("simulate_queries: label count mismatch");
  std::vector<QueryInstance> out;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    Rng rng(derive_seed(seed, sessions[i].id()));
    for (int k = 0; k < per_session; ++k) {
      const auto t = sample_query_time(sessions[i], labels[i], rng);
      if (!t) break;
      auto q = make_query_instance(sessions[i], labels[i], *t);
      q.session_index = i;
      q.id = q.session_id + "#" + std::to_string(k);
      out.push_back(std::move(q));
    }
  }
  return out;
}

std::size_t test_count(std::size_t n, double test_fraction) {
  // the slack keeps exact halves such as 3 * (1/6) from rounding down through
  // representation error in the fraction
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_fraction + 0.5 + 1e-9));
}

DatasetSplit stratified_session_split(std::span<const QueryInstance> queries,
                                      double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("test_fraction must be in (0,1)");
  DatasetSplit split;
  split.seed = seed;
  // session id -> stratum; ordered map gives the canonical session order
  std::map<std::string, OutcomeKind> strata;
  for (const auto& q : queries) strata.emplace(q.session_id, q.outcome.kind);

  std::map<std::string, Assignment> assignment;
  for (OutcomeKind kind : {OutcomeKind::Life, OutcomeKind::CensoredAtLeast}) {
    std::vector<std::string> ids;
    for (const auto& [id, k] : strata)
      if (k == kind) ids.push_back(id);
    const double min_sessions = 1.0 / test_fraction;
    if (static_cast<double>(ids.size()) < min_sessions)
      split.warnings.push_back(std::string("EmptyStratum: ") + outcome_name(kind) + " has " +
                               std::to_string(ids.size()) + " sessions");
    Rng rng(derive_seed(seed, kind == OutcomeKind::Life ? "split/observed" : "split/censored"));
    rng.shuffle(ids.begin(), ids.end());
    const auto n_test = test_count(ids.size(), test_fraction);
    for (std::size_t i = 0; i < ids.size(); ++i)
      assignment[ids[i]] = i < n_test ? Assignment::Test : Assignment::Train;
  }
  for (const auto& q : queries)
    (assignment[q.session_id] == Assignment::Test ? split.test : split.train).push_back(q);
  return split;
}

void write_split_manifest(std::ostream& out, const DatasetSplit& split) {
  out << "session_id,stratum,assignment,t_query,outcome_kind,outcome_minutes\n";
  auto rows = [&](const std::vector<QueryInstance>& qs, const char* which) {
    for (const auto& q : qs) {
      const char* stratum = q.outcome.observed() ? "observed" : "censored";
      out << q.session_id << ',' << stratum << ',' << which << ',' << q.t_query << ','
          << outcome_name(q.outcome.kind) << ',' << format_double(q.outcome.minutes) << '\n';
    }
  };
  rows(split.train, "train");
  rows(split.test, "test");
}

std::vector<SplitRow> read_split_manifest(LineSource& in) {
  std::vector<SplitRow> rows;
  std::string line;
  std::vector<std::string_view> f;
  bool header = false;
  while (in.next(line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "session_id,stratum,assignment,t_query,outcome_kind,outcome_minutes")
        throw std::runtime_error("split manifest: bad header");
      header = true;
      continue;
    }
    split_fields(line, f);
    const auto t = f.size() == 6 ? parse_int(f[3]) : std::nullopt;
    const auto m = f.size() == 6 ? parse_double(f[5]) : std::nullopt;
    if (!t || !m) throw std::runtime_error("split manifest: bad row `" + line + "`");
    SplitRow r;
    r.session_id = std::string(f[0]);
    r.stratum = f[1] == "observed" ? OutcomeKind::Life : OutcomeKind::CensoredAtLeast;
    r.assignment = f[2] == "test" ? Assignment::Test : Assignment::Train;
    r.t_query = *t;
    r.outcome.kind = f[4] == "life" ? OutcomeKind::Life : OutcomeKind::CensoredAtLeast;
    r.outcome.minutes = *m;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace blife
