#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blife/errors.hpp"
#include "blife/ingest.hpp"
#include "blife/query_sim.hpp"
#include "blife/sessionizer.hpp"

namespace blife {

inline constexpr int kNumGroups = 21;

struct FeatureConfig {
  int top_k_apps = 50;
  int n_broadcast_types = 86;
  int t1_width = 9;
  int t2_width = 150;
  int n_users = 51;
  Timestamp utc_offset = 0;  // seconds added before taking hour/weekday
};

struct GroupLayout {
  int group = 0;  // 1..21
  std::string name;
  int offset = 0;
  int width = 0;
};

/// Column layout of feature groups F1..F21 plus the data-derived vocabularies
/// (top-K apps, user index order) that fix the meaning of each column.
class FeatureSchema {
 public:
  static constexpr int kVersion = 1;

  FeatureSchema(FeatureConfig config, std::vector<std::string> top_apps,
                std::vector<std::string> users);

  const FeatureConfig& config() const { return config_; }
  const std::vector<std::string>& top_apps() const { return top_apps_; }
  const std::vector<std::string>& users() const { return users_; }
  const std::vector<GroupLayout>& groups() const { return groups_; }
  const GroupLayout& group(int id) const { return groups_.at(static_cast<std::size_t>(id - 1)); }
  const std::vector<std::string>& column_names() const { return columns_; }
  int width() const { return static_cast<int>(columns_.size()); }

  /// Index of `user` in F19, or -1.
  int user_index(const std::string& user) const;
  /// Rank of `app` among the top apps, or -1.
  int app_rank(const std::string& app) const;

  /// Column indices covered by the given group ids, in schema order.
  std::vector<int> columns(std::span<const int> group_ids) const;

  std::uint64_t fingerprint() const;

  void write(std::ostream& out) const;
  static FeatureSchema read(LineSource& in);

 private:
  FeatureConfig config_;
  std::vector<std::string> top_apps_;  // exactly top_k_apps entries; "" pads
  std::vector<std::string> users_;
  std::vector<GroupLayout> groups_;
  std::vector<std::string> columns_;
  std::map<std::string, int> user_index_;
  std::map<std::string, int> app_rank_;
};

/// Per-group widths at a given configuration, F1 first.
std::vector<int> group_widths(const FeatureConfig& config);

/// Ranks apps by sample count inside the training queries' observed windows
/// [t_start, t_query]; ties go to the lexicographically smaller app id. Users
/// are indexed in sorted id order. Throws std::invalid_argument if there are
/// more users than config.n_users.
FeatureSchema build_schema(const FeatureConfig& config,
                           const std::map<std::string, UserTrace>& traces,
                           std::span<const QueryInstance> training_queries,
                           std::vector<std::string>* warnings = nullptr);

/// Hour of day (0-23) and weekday (0 = Monday) in the configured local time.
int local_hour(Timestamp t, Timestamp utc_offset);
int local_weekday(Timestamp t, Timestamp utc_offset);

/// Seconds in [a, b] during which the screen was on.
double screen_on_seconds(const UserTrace& trace, Timestamp a, Timestamp b);

struct SessionSummary {
  Timestamp t_start = 0;
  Timestamp t_end = 0;
  int start_hour = 0;
  int start_weekday = 0;
  double rate = 0.0;             // (b_start - b_end) / minutes
  double screen_fraction = 0.0;  // of [t_start, t_end]
};

/// Per-user session summaries, ordered by end time.
class UserHistoryIndex {
 public:
  UserHistoryIndex() = default;
  static UserHistoryIndex build(std::span<const Session> sessions,
                                const std::map<std::string, UserTrace>& traces,
                                Timestamp utc_offset);

  void add(const std::string& user, SessionSummary summary);
  /// Sessions of `user` that ended strictly before `t_start`.
  std::span<const SessionSummary> prior(const std::string& user, Timestamp t_start) const;

 private:
  std::map<std::string, std::vector<SessionSummary>> by_user_;
};

/// What feature extraction may see: the user, the session start and the query time.
struct QueryPoint {
  std::string user_id;
  Timestamp t_start = 0;
  Timestamp t_query = 0;
};

inline QueryPoint query_point(const QueryInstance& q) { return {q.user_id, q.t_start, q.t_query}; }

// Each extractor fills its groups' cells of `row` (full schema width) and
// leaves unavailable values as NaN.
void extract_query_time_features(const FeatureSchema& schema, const QueryPoint& q,
                                 const UserTrace& trace, Eigen::Ref<Eigen::VectorXd> row);
void extract_session_features(const FeatureSchema& schema, const QueryPoint& q,
                              const UserTrace& trace, Eigen::Ref<Eigen::VectorXd> row);
void extract_user_features(const FeatureSchema& schema, const QueryPoint& q,
                           const UserHistoryIndex& history, Eigen::Ref<Eigen::VectorXd> row);

/// All 21 groups.
Eigen::VectorXd extract_features(const FeatureSchema& schema, const QueryPoint& q,
                                 const UserTrace& trace, const UserHistoryIndex& history);

/// One row per query; NaN marks missing cells.
Eigen::MatrixXd extract_feature_matrix(const FeatureSchema& schema,
                                       std::span<const QueryInstance> queries,
                                       const std::map<std::string, UserTrace>& traces,
                                       const UserHistoryIndex& history);

/// Median imputation followed by standardization, fitted on training rows.
struct Preprocessor {
  Eigen::VectorXd median;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  std::vector<bool> pass_through;

  int width() const { return static_cast<int>(median.size()); }

  void write(std::ostream& out) const;
  static Preprocessor read(LineSource& in);
};

/// Throws std::invalid_argument when fewer than two rows are given.
Preprocessor fit_preprocessor(const Eigen::MatrixXd& rows);

Eigen::VectorXd apply_preprocessor(const Preprocessor& pre, const Eigen::VectorXd& row);
Eigen::MatrixXd apply_preprocessor(const Preprocessor& pre, const Eigen::MatrixXd& rows);

/// Columns `cols` of `rows`.
Eigen::MatrixXd select_columns(const Eigen::MatrixXd& rows, std::span<const int> cols);

/// Header of column names, then one comma-separated row per query; NaN is an empty cell.
void write_feature_matrix(std::ostream& out, const std::vector<std::string>& names,
                          const Eigen::MatrixXd& rows);
Eigen::MatrixXd read_feature_matrix(LineSource& in, std::vector<std::string>* names = nullptr);

void write_labels(std::ostream& out, std::span<const QueryInstance> queries);
std::vector<Outcome> read_labels(LineSource& in);

}  // namespace blife
