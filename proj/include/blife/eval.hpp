#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blife/models.hpp"
#include "blife/query_sim.hpp"
#include "blife/sessionizer.hpp"
#include "blife/textio.hpp"

namespace blife {

struct PredictionRecord {
  std::string id;
  double predicted = 0.0;  // minutes
  Outcome outcome;
};

/// Metric precondition failures (NoObservedRows, AllPairsTied, NoDeterminablePairs, ...).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// sqrt(mean squared error) over observed records.
double rmse(std::span<const PredictionRecord> records);

/// (C - D) / (C + D) over observed pairs; pairs tied in either list are left
/// out entirely. O(n log n).
double kendall_tau(std::span<const PredictionRecord> records);

/// Same statistic by enumerating every pair; test oracle.
double kendall_tau_oracle(std::span<const PredictionRecord> records);

enum class CIndexVariant {
  Paper,    // mean pair score over all unordered pairs; undeterminable pairs score 0.5
  Harrell,  // mean pair score over determinable pairs only
};

const char* to_string(CIndexVariant v);

/// Pair (i, j) is determinable when the record with the smaller outcome time is
/// observed and its time is strictly smaller. Determinable pairs score 1 when
/// the prediction order agrees, 0 when it disagrees and 0.5 on a prediction tie.
/// O(n log n).
double concordance_index(std::span<const PredictionRecord> records,
                         CIndexVariant variant = CIndexVariant::Paper);

/// Double loop over all pairs with the same rules; test oracle (n <= 10,000).
double concordance_oracle(std::span<const PredictionRecord> records,
                          CIndexVariant variant = CIndexVariant::Paper);

struct StratumCounts {
  std::size_t observed = 0;
  std::size_t censored = 0;
};

struct MetricReport {
  double rmse = 0.0;
  double tau = 0.0;
  double c_index = 0.0;
  CIndexVariant variant = CIndexVariant::Paper;
  StratumCounts counts;
};

MetricReport evaluate(std::span<const PredictionRecord> records,
                      CIndexVariant variant = CIndexVariant::Paper);

/// Key/value text: one `key = value` line per field.
void write_metric_report(std::ostream& out, const MetricReport& r);

enum class Metric { Rmse, Tau, CIndexPaper, CIndexHarrell };
const char* to_string(Metric m);
Metric parse_metric(const std::string& name);
double metric_value(Metric m, std::span<const PredictionRecord> records);

struct BootstrapResult {
  double observed_delta = 0.0;
  std::vector<double> replicate_deltas;  // NaN where the metric was undefined
  double p_value = 1.0;
};

/// Paired bootstrap with the shifted null: replicate deltas are recentred on
/// their mean and compared with |observed_delta|. Throws MetricError on
/// mismatched query ids.
BootstrapResult bootstrap_shift_test(std::span<const PredictionRecord> a,
                                     std::span<const PredictionRecord> b, Metric metric,
                                     int replicates, std::uint64_t seed, int threads = 1);

void write_bootstrap_result(std::ostream& out, const BootstrapResult& r, Metric metric);

/// Minutes spent on each successive 1% from b_start down to b_end.
std::vector<double> per_percent_minutes(const Session& session);

/// Population variance of per_percent_minutes; throws MetricError when fewer
/// than two whole percent were consumed.
double session_stability_variance(const Session& session);

struct StabilityInput {
  std::vector<std::string> session_ids;
  std::vector<double> variance;   // one per session
  Eigen::MatrixXd features;       // preprocessed, one row per session's query
  std::vector<Outcome> outcomes;
};

struct StabilityReport {
  // tau[group][feature_set]; group 0 has the lowest variance
  std::vector<std::vector<double>> tau;
  std::vector<std::size_t> group_sizes;
};

/// Sorts sessions by (variance, id), cuts them into 5 quintile groups and, for
/// each group in turn, trains on the other four (observed rows only) and
/// records validation tau for every column set. Throws MetricError with fewer
/// than 25 sessions.
StabilityReport stability_experiment(const StabilityInput& input, const ModelConfig& cfg,
                                     const std::vector<std::vector<int>>& feature_sets);

/// Group index (0..4) of each position in variance order for n sessions.
std::vector<int> quintile_groups(std::size_t n);

void write_predictions(std::ostream& out, std::span<const PredictionRecord> records);
std::vector<PredictionRecord> read_predictions(LineSource& in);

}  // namespace blife
