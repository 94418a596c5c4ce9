#include "blife/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>
#include <unordered_map>

#include "blife/rng.hpp"

namespace blife {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Fenwick tree of counts over compressed ranks.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t rank) {
    for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  /// Count of inserted ranks < rank.
  std::int64_t below(std::size_t rank) const {
    std::int64_t s = 0;
    for (std::size_t i = rank; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::int64_t> tree_;
};

std::vector<std::size_t> dense_ranks(const std::vector<double>& v) {
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<std::size_t> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    r[i] = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v[i]) -
                                    sorted.begin());
  return r;
}

std::vector<const PredictionRecord*> observed_only(std::span<const PredictionRecord> records) {
  std::vector<const PredictionRecord*> out;
  for (const auto& r : records)
    if (r.outcome.observed()) out.push_back(&r);
  return out;
}

double tau_from_counts(std::int64_t c, std::int64_t d) {
  if (c + d == 0) throw MetricError("kendall_tau: AllPairsTied");
  return static_cast<double>(c - d) / static_cast<double>(c + d);
}

struct PairCounts {
  std::int64_t concordant = 0, discordant = 0, tied = 0;
  std::int64_t determinable() const { return concordant + discordant + tied; }
};

double cindex_from_counts(const PairCounts& pc, std::size_t n, CIndexVariant variant) {
  if (variant == CIndexVariant::Harrell) {
    if (pc.determinable() == 0) throw MetricError("concordance_index: NoDeterminablePairs");
    return (static_cast<double>(pc.concordant) + 0.5 * static_cast<double>(pc.tied)) /
           static_cast<double>(pc.determinable());
  }
  if (n < 2) return 0.5;
  const auto all = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  const double score = static_cast<double>(pc.concordant) + 0.5 * static_cast<double>(pc.tied) +
                       0.5 * static_cast<double>(all - pc.determinable());
  return score / static_cast<double>(all);
}

}  // namespace

double rmse(std::span<const PredictionRecord> records) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (!r.outcome.observed()) continue;
    const double e = r.predicted - r.outcome.minutes;
    sum += e * e;
    ++n;
  }
  if (n == 0) throw MetricError("rmse: NoObservedRows");
  return std::sqrt(sum / static_cast<double>(n));
}

double kendall_tau(std::span<const PredictionRecord> records) {
  const auto obs = observed_only(records);
  if (obs.size() < 2) throw MetricError("kendall_tau: fewer than two observed rows");
  std::vector<double> actual(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) actual[i] = obs[i]->outcome.minutes;
  const auto y_rank = dense_ranks(actual);
  std::vector<std::size_t> order(obs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return obs[a]->predicted < obs[b]->predicted; });
  Fenwick fw(obs.size());
  std::int64_t inserted = 0, c = 0, d = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && obs[order[j]]->predicted == obs[order[i]]->predicted) ++j;
    for (std::size_t k = i; k < j; ++k) {
      const auto r = y_rank[order[k]];
      const auto less = fw.below(r);
      const auto less_eq = fw.below(r + 1);
      c += less;
      d += inserted - less_eq;
    }
    for (std::size_t k = i; k < j; ++k) {
      fw.add(y_rank[order[k]]);
      ++inserted;
    }
    i = j;
  }
  return tau_from_counts(c, d);
}

double kendall_tau_oracle(std::span<const PredictionRecord> records) {
  const auto obs = observed_only(records);
  if (obs.size() < 2) throw MetricError("kendall_tau: fewer than two observed rows");
  std::int64_t c = 0, d = 0;
  for (std::size_t i = 0; i < obs.size(); ++i)
    for (std::size_t j = i + 1; j < obs.size(); ++j) {
      const double s = (obs[i]->predicted - obs[j]->predicted) *
                       (obs[i]->outcome.minutes - obs[j]->outcome.minutes);
      if (s > 0) ++c;
      else if (s < 0) ++d;
    }
  return tau_from_counts(c, d);
}

const char* to_string(CIndexVariant v) { return v == CIndexVariant::Paper ? "paper" : "harrell"; }

double concordance_index(std::span<const PredictionRecord> records, CIndexVariant variant) {
  const std::size_t n = records.size();
  std::vector<double> pred(n);
  for (std::size_t i = 0; i < n; ++i) pred[i] = records[i].predicted;
  const auto p_rank = dense_ranks(pred);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // descending outcome time: everything already inserted has a strictly larger time
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].outcome.minutes > records[b].outcome.minutes;
  });
  Fenwick fw(n);
  std::int64_t inserted = 0;
  PairCounts pc;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && records[order[j]].outcome.minutes == records[order[i]].outcome.minutes) ++j;
    for (std::size_t k = i; k < j; ++k) {
      if (!records[order[k]].outcome.observed()) continue;
      const auto r = p_rank[order[k]];
      const auto less = fw.below(r);
      const auto less_eq = fw.below(r + 1);
      pc.discordant += less;               // longer-lived partner predicted shorter
      pc.tied += less_eq - less;
      pc.concordant += inserted - less_eq;
    }
    for (std::size_t k = i; k < j; ++k) {
      fw.add(p_rank[order[k]]);
      ++inserted;
    }
    i = j;
  }
  return cindex_from_counts(pc, n, variant);
}

double concordance_oracle(std::span<const PredictionRecord> records, CIndexVariant variant) {
  const std::size_t n = records.size();
  double score = 0.0;
  std::int64_t all = 0, determinable = 0;
  double det_score = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      ++all;
      const auto* a = &records[i];
      const auto* b = &records[j];
      if (b->outcome.minutes < a->outcome.minutes) std::swap(a, b);
      const bool det = a->outcome.observed() && a->outcome.minutes < b->outcome.minutes;
      double s = 0.5;
      if (det) {
        ++determinable;
        if (a->predicted < b->predicted) s = 1.0;
        else if (a->predicted > b->predicted) s = 0.0;
        det_score += s;
      }
      score += s;
    }
  if (variant == CIndexVariant::Harrell) {
    if (determinable == 0) throw MetricError("concordance_index: NoDeterminablePairs");
    return det_score / static_cast<double>(determinable);
  }
  if (n < 2) return 0.5;
  return score / static_cast<double>(all);
}

MetricReport evaluate(std::span<const PredictionRecord> records, CIndexVariant variant) {
  MetricReport r;
  r.variant = variant;
  for (const auto& rec : records) (rec.outcome.observed() ? r.counts.observed : r.counts.censored)++;
  r.rmse = rmse(records);
  r.tau = kendall_tau(records);
  r.c_index = concordance_index(records, variant);
  return r;
}

void write_metric_report(std::ostream& out, const MetricReport& r) {
  out << "rmse = " << format_double(r.rmse) << '\n'
      << "tau = " << format_double(r.tau) << '\n'
      << "c_index = " << format_double(r.c_index) << '\n'
      << "c_index_variant = " << to_string(r.variant) << '\n'
      << "n_observed = " << r.counts.observed << '\n'
      << "n_censored = " << r.counts.censored << '\n';
}

const char* to_string(Metric m) {
  switch (m) {
    case Metric::Rmse: return "rmse";
    case Metric::Tau: return "tau";
    case Metric::CIndexPaper: return "c_index";
    case Metric::CIndexHarrell: return "c_index_harrell";
  }
  return "?";
}

Metric parse_metric(const std::string& name) {
  for (auto m : {Metric::Rmse, Metric::Tau, Metric::CIndexPaper, Metric::CIndexHarrell})
    if (name == to_string(m)) return m;
  throw std::invalid_argument("unknown metric `" + name + "`");
}

double metric_value(Metric m, std::span<const PredictionRecord> records) {
  switch (m) {
    case Metric::Rmse: return rmse(records);
    case Metric::Tau: return kendall_tau(records);
    case Metric::CIndexPaper: return concordance_index(records, CIndexVariant::Paper);
    case Metric::CIndexHarrell: return concordance_index(records, CIndexVariant::Harrell);
  }
  throw std::invalid_argument("unknown metric");
}

BootstrapResult bootstrap_shift_test(std::span<const PredictionRecord> a,
                                     std::span<const PredictionRecord> b, Metric metric,
                                     int replicates, std::uint64_t seed, int threads) {
  if (a.size() != b.size()) throw MetricError("bootstrap: MismatchedIds (different sizes)");
  if (replicates < 1) throw std::invalid_argument("bootstrap: replicates must be >= 1");
  std::unordered_map<std::string, std::size_t> b_index;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (!b_index.emplace(b[i].id, i).second) throw MetricError("bootstrap: duplicate id " + b[i].id);
  // b reordered to a's order; positions, not labels, drive the resampling
  std::vector<PredictionRecord> b_aligned;
  b_aligned.reserve(b.size());
  for (const auto& r : a) {
    const auto it = b_index.find(r.id);
    if (it == b_index.end()) throw MetricError("bootstrap: MismatchedIds (" + r.id + ")");
    b_aligned.push_back(b[it->second]);
  }

  BootstrapResult res;
  res.observed_delta = metric_value(metric, a) - metric_value(metric, b_aligned);
  res.replicate_deltas.assign(static_cast<std::size_t>(replicates), kNaN);
  const auto n = a.size();

  auto run = [&](int rep) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
    std::vector<PredictionRecord> ra(n), rb(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(rng.below(n));
      ra[i] = a[k];
      rb[i] = b_aligned[k];
    }
    try {
      res.replicate_deltas[static_cast<std::size_t>(rep)] =
          metric_value(metric, ra) - metric_value(metric, rb);
    } catch (const MetricError&) {
      // undefined on this resample; stays NaN
    }
  };
  const int t = std::max(1, std::min(threads, replicates));
  if (t == 1) {
    for (int rep = 0; rep < replicates; ++rep) run(rep);
  } else {
    std::vector<std::jthread> pool;
    for (int k = 0; k < t; ++k)
      pool.emplace_back([&, k] {
        for (int rep = k; rep < replicates; rep += t) run(rep);
      });
  }

  double sum = 0.0;
  std::size_t finite = 0;
  for (double d : res.replicate_deltas)
    if (!std::isnan(d)) {
      sum += d;
      ++finite;
    }
  if (finite == 0) throw MetricError("bootstrap: metric undefined on every replicate");
  const double mean = sum / static_cast<double>(finite);
  const double obs = std::abs(res.observed_delta);
  std::size_t extreme = 0;
  for (double d : res.replicate_deltas)
    if (!std::isnan(d) && std::abs(d - mean) >= obs) ++extreme;
  res.p_value = static_cast<double>(1 + extreme) / static_cast<double>(finite + 1);
  return res;
}

void write_bootstrap_result(std::ostream& out, const BootstrapResult& r, Metric metric) {
  out << "metric = " << to_string(metric) << '\n'
      << "observed_delta = " << format_double(r.observed_delta) << '\n'
      << "replicates = " << r.replicate_deltas.size() << '\n'
      << "p_value = " << format_double(r.p_value) << '\n';
}

std::vector<double> per_percent_minutes(const Session& session) {
  // reach[v] = first time the level was <= v
  std::vector<double> tb;
  if (session.entries.empty()) return tb;
  Timestamp prev_time = session.t_start;
  std::size_t cursor = 0;
  for (int v = session.b_start - 1; v >= session.b_end; --v) {
    while (cursor < session.entries.size() && session.entries[cursor].level > v) ++cursor;
    if (cursor == session.entries.size()) break;
    const Timestamp reached = session.entries[cursor].timestamp;
    tb.push_back(static_cast<double>(reached - prev_time) / 60.0);
    prev_time = reached;
  }
  return tb;
}

double session_stability_variance(const Session& session) {
  const auto tb = per_percent_minutes(session);
  if (tb.size() < 2) throw MetricError("session_stability_variance: InsufficientConsumption");
  const double mean = std::accumulate(tb.begin(), tb.end(), 0.0) / static_cast<double>(tb.size());
  double ss = 0.0;
  for (double x : tb) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(tb.size());
}

std::vector<int> quintile_groups(std::size_t n) {
  std::vector<int> g(n);
  for (std::size_t p = 0; p < n; ++p) g[p] = static_cast<int>(5 * p / n);
  return g;
}

StabilityReport stability_experiment(const StabilityInput& input, const ModelConfig& cfg,
                                     const std::vector<std::vector<int>>& feature_sets) {
  const std::size_t n = input.session_ids.size();
  if (n < 25) throw MetricError("stability_experiment: TooFewSessions");
  if (input.variance.size() != n || input.outcomes.size() != n ||
      static_cast<std::size_t>(input.features.rows()) != n)
    throw std::invalid_argument("stability_experiment: inconsistent input sizes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (input.variance[a] != input.variance[b]) return input.variance[a] < input.variance[b];
    return input.session_ids[a] < input.session_ids[b];
  });
  const auto pos_group = quintile_groups(n);
  std::vector<int> group(n);
  for (std::size_t p = 0; p < n; ++p) group[order[p]] = pos_group[p];

  StabilityReport report;
  report.tau.assign(5, std::vector<double>(feature_sets.size(), kNaN));
  report.group_sizes.assign(5, 0);
  for (std::size_t i = 0; i < n; ++i) ++report.group_sizes[static_cast<std::size_t>(group[i])];

  for (int g = 0; g < 5; ++g) {
    std::vector<Eigen::Index> train, valid;
    for (std::size_t i = 0; i < n; ++i) {
      if (!input.outcomes[i].observed()) continue;
      (group[i] == g ? valid : train).push_back(static_cast<Eigen::Index>(i));
    }
    if (train.empty() || valid.size() < 2) continue;
    Eigen::VectorXd y(static_cast<Eigen::Index>(train.size()));
    for (std::size_t k = 0; k < train.size(); ++k)
      y[static_cast<Eigen::Index>(k)] = input.outcomes[static_cast<std::size_t>(train[k])].minutes;
    for (std::size_t s = 0; s < feature_sets.size(); ++s) {
      const auto& cols = feature_sets[s];
      Eigen::MatrixXd Xt(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(cols.size()));
      Eigen::MatrixXd Xv(static_cast<Eigen::Index>(valid.size()), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t c = 0; c < cols.size(); ++c) {
        for (std::size_t k = 0; k < train.size(); ++k)
          Xt(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = input.features(train[k], cols[c]);
        for (std::size_t k = 0; k < valid.size(); ++k)
          Xv(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = input.features(valid[k], cols[c]);
      }
      const auto model = fit_model(Xt, y, cfg);
      const Eigen::VectorXd pred = model.predict(Xv, model.fingerprint);
      std::vector<PredictionRecord> recs;
      for (std::size_t k = 0; k < valid.size(); ++k) {
        const auto i = static_cast<std::size_t>(valid[k]);
        recs.push_back({input.session_ids[i], pred[static_cast<Eigen::Index>(k)], input.outcomes[i]});
      }
      try {
        report.tau[static_cast<std::size_t>(g)][s] = kendall_tau(recs);
      } catch (const MetricError&) {
      }
    }
  }
  return report;
}

void write_predictions(std::ostream& out, std::span<const PredictionRecord> records) {
  out << "query_id,predicted,outcome_kind,outcome_minutes\n";
  for (const auto& r : records)
    out << r.id << ',' << format_double(r.predicted) << ','
        << (r.outcome.observed() ? "life" : "censored_at_least") << ','
        << format_double(r.outcome.minutes) << '\n';
}

std::vector<PredictionRecord> read_predictions(LineSource& in) {
  std::string line;
  if (!in.next(line) || line != "query_id,predicted,outcome_kind,outcome_minutes")
    throw std::runtime_error("predictions file: bad header");
  std::vector<PredictionRecord> out;
  std::vector<std::string_view> f;
  while (in.next(line)) {
    if (line.empty()) continue;
    split_fields(line, f);
    const auto p = f.size() == 4 ? parse_double(f[1]) : std::nullopt;
    const auto m = f.size() == 4 ? parse_double(f[3]) : std::nullopt;
    if (!p || !m) throw std::runtime_error("predictions file: bad row `" + line + "`");
    out.push_back({std::string(f[0]), *p,
                   {f[2] == "life" ? OutcomeKind::Life : OutcomeKind::CensoredAtLeast, *m}});
  }
  return out;
}

}  // namespace blife
