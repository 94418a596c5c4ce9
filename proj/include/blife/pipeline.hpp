#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blife/eval.hpp"
#include "blife/features.hpp"
#include "blife/models.hpp"
#include "blife/sessionizer.hpp"
#include "blife/synth.hpp"

namespace blife {

inline constexpr const char* kToolVersion = "0.3.0";

class BadGroupId : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "F1,F10-F12" -> {1, 10, 11, 12}; expanded, deduplicated, first occurrence wins.
std::vector<int> feature_set_parse(const std::string& expr);

/// Every setting as a string keyed by its (globally unique) name. Defaults are
/// filled in at construction; `set` rejects unknown keys with ConfigInvalid.
class PipelineConfig {
 public:
  PipelineConfig();

  /// `key = value` lines grouped under `[section]` headers; `#` starts a comment.
  static PipelineConfig parse(std::istream& in, const std::string& origin = "config");
  static PipelineConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has_key(const std::string& key) const { return values_.count(key) != 0; }

  /// Canonical `[section]` / `key = value` dump in a fixed order.
  void write(std::ostream& out) const;

  std::filesystem::path data_dir() const { return get("data_dir"); }
  std::filesystem::path work_dir() const { return get("work_dir"); }
  std::uint64_t seed() const;
  int threads() const;

  SynthConfig synth() const;
  RegimeModel regimes() const;
  SegmentationConfig segmentation() const;
  FeatureConfig features() const;
  ParseOptions parse_options() const;
  ModelConfig model(ModelKind kind) const;
  double test_fraction() const;
  int queries_per_session() const;
  CIndexVariant c_index_variant() const;
  int bootstrap_replicates() const;
  Metric bootstrap_metric() const;
  /// Cumulative feature sets for the stability experiment, e.g. "F1-F4; F1-F18; F1-F21".
  std::vector<std::vector<int>> stability_sets() const;

  struct Experiment {
    std::string feature_expr;
    std::vector<int> groups;
    ModelKind model = ModelKind::Boost;
    /// File-name-safe label, e.g. "F1_F10-F12__boost".
    std::string name() const;
  };
  std::vector<Experiment> experiments() const;

  /// Throws ConfigInvalid / BadGroupId on malformed values.
  void validate() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Derived seeds, one per randomized stage.
struct StageSeeds {
  std::uint64_t synth, query, split, model, bootstrap;
  explicit StageSeeds(std::uint64_t master);
};

const std::vector<std::string>& stage_names();

/// Runs one named stage ("all" runs every stage in order). Writes artifacts
/// under the configured directories plus a run manifest per stage. Progress
/// and result tables go to `out`.
void run_stage(const std::string& stage, const PipelineConfig& cfg, std::ostream& out);

/// Full command-line entry point: returns 0 on success, 1 on usage errors and
/// 2 on data errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace blife
