#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blife/rng.hpp"
#include "blife/sessionizer.hpp"

namespace blife {

/// Queries never sit closer than this to the session start or to U.
inline constexpr Timestamp kQueryBorder = 120;

enum class OutcomeKind : std::uint8_t { Life, CensoredAtLeast };

struct Outcome {
  OutcomeKind kind = OutcomeKind::Life;
  double minutes = 0.0;
  bool observed() const { return kind == OutcomeKind::Life; }
};

struct QueryInstance {
  std::size_t session_index = 0;  // into the session list the query was drawn from
  std::string session_id;
  std::string user_id;
  Timestamp t_start = 0;
  Timestamp t_query = 0;
  Outcome outcome;
  /// "<session_id>#<k>" for the k-th query of a session.
  std::string id;
};

class WindowViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Uniform integer second on [t_start + 120, U - 120] with U = t_event for
/// observed sessions and t_end otherwise; nullopt when the window is empty.
std::optional<Timestamp> sample_query_time(const Session& session, const SessionLabel& label,
                                           Rng& rng);

QueryInstance make_query_instance(const Session& session, const SessionLabel& label,
                                  Timestamp t_query);

/// Draws `per_session` queries for every session. Each session uses its own
/// sub-seed derived from (seed, session id), so the result does not depend on
/// processing order. Sessions with an empty window are skipped.
std::vector<QueryInstance> simulate_queries(std::span<const Session> sessions,
                                            std::span<const SessionLabel> labels,
                                            std::uint64_t seed, int per_session = 1);

enum class Assignment : std::uint8_t { Train, Test };

struct DatasetSplit {
  std::vector<QueryInstance> train;
  std::vector<QueryInstance> test;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// Number of test sessions drawn from a stratum of n sessions: n * fraction
/// rounded half up.
std::size_t test_count(std::size_t n, double test_fraction);

/// Session-level split, stratified by outcome kind. Sessions are ordered by id
/// before shuffling, so membership depends only on (queries, seed).
DatasetSplit stratified_session_split(std::span<const QueryInstance> queries,
                                      double test_fraction, std::uint64_t seed);

void write_split_manifest(std::ostream& out, const DatasetSplit& split);

struct SplitRow {
  std::string session_id;
  OutcomeKind stratum = OutcomeKind::Life;
  Assignment assignment = Assignment::Train;
  Timestamp t_query = 0;
  Outcome outcome;
};

std::vector<SplitRow> read_split_manifest(LineSource& in);

}  // namespace blife
