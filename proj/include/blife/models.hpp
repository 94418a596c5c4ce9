#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blife/errors.hpp"

namespace blife {

enum class ModelKind { Linear, Tree, Forest, Boost, Boost2 };

const char* to_string(ModelKind kind);
/// Accepts "linear", "tree", "forest", "boost", "boost2".
ModelKind parse_model_kind(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::Boost;
  int n_estimators = 100;
  double learning_rate = 0.1;
  // 0 selects the kind's default: 3 for boost/boost2, unlimited otherwise.
  // Negative means unlimited.
  int max_depth = 0;
  int min_samples_leaf = 5;
  double subsample = 1.0;        // boosting row fraction per stage
  double feature_fraction = 1.0; // forest column fraction per tree
  double l2_reg = 1.0;           // boost2 leaf-weight penalty
  double ridge = 1e-8;           // linear
  bool bootstrap = true;         // forest: false trains every tree on all rows
  std::uint64_t seed = 0;
  int threads = 1;

  int effective_max_depth() const;
  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

class SingularSystem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TreeNode {
  int column = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  bool is_leaf() const { return column < 0; }
};

/// Binary regression tree; rows with x[column] < threshold go left.
struct RegressionTree {
  std::vector<TreeNode> nodes;

  int leaf_of(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return nodes[static_cast<std::size_t>(leaf_of(x))].value;
  }
  int depth() const;
};

class TrainedModel {
 public:
  ModelKind kind = ModelKind::Linear;
  std::uint64_t fingerprint = 0;
  int n_cols = 0;

  // linear
  Eigen::VectorXd coef;
  double intercept = 0.0;

  // tree ensembles: base + tree_weight * sum(tree predictions)
  double base = 0.0;
  double tree_weight = 1.0;
  std::vector<RegressionTree> trees;

  /// Throws SchemaMismatch when `fingerprint_` differs from the fitted one or
  /// the column count is wrong.
  Eigen::VectorXd predict(const Eigen::MatrixXd& X, std::uint64_t fingerprint_) const;

  void save(std::ostream& out) const;
  static TrainedModel load(std::istream& in);
};

TrainedModel fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const ModelConfig& cfg, std::uint64_t fingerprint = 0);
TrainedModel fit_regression_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const ModelConfig& cfg, std::uint64_t fingerprint = 0);
TrainedModel fit_random_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const ModelConfig& cfg, std::uint64_t fingerprint = 0);
/// Stagewise boosting; cfg.kind selects first-order (Boost) or the
/// L2-regularized Newton variant (Boost2).
TrainedModel fit_gradient_boosting(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const ModelConfig& cfg, std::uint64_t fingerprint = 0,
                                   std::vector<double>* stage_loss = nullptr);

/// Dispatches on cfg.kind.
TrainedModel fit_model(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ModelConfig& cfg,
                       std::uint64_t fingerprint = 0);

inline Eigen::VectorXd predict(const TrainedModel& model, const Eigen::MatrixXd& X,
                               std::uint64_t fingerprint) {
  return model.predict(X, fingerprint);
}

}  // namespace blife
