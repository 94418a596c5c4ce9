#include "blife/models.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <thread>

#include "blife/rng.hpp"
#include "blife/textio.hpp"

namespace blife {

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Linear: return "linear";
    case ModelKind::Tree: return "tree";
    case ModelKind::Forest: return "forest";
    case ModelKind::Boost: return "boost";
    case ModelKind::Boost2: return "boost2";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  for (auto k : {ModelKind::Linear, ModelKind::Tree, ModelKind::Forest, ModelKind::Boost,
                 ModelKind::Boost2})
    if (name == to_string(k)) return k;
  throw std::invalid_argument("unknown model kind `" + name + "`");
}

int ModelConfig::effective_max_depth() const {
  if (max_depth != 0) return max_depth;
  return (kind == ModelKind::Boost || kind == ModelKind::Boost2) ? 3 : -1;
}

void ModelConfig::validate() const {
  if (n_estimators < 1) throw std::invalid_argument("n_estimators must be >= 1");
  if (min_samples_leaf < 1) throw std::invalid_argument("min_samples_leaf must be >= 1");
  if (!(learning_rate > 0 && learning_rate <= 1))
    throw std::invalid_argument("learning_rate must be in (0,1]");
  if (!(subsample > 0 && subsample <= 1)) throw std::invalid_argument("subsample must be in (0,1]");
  if (!(feature_fraction > 0 && feature_fraction <= 1))
    throw std::invalid_argument("feature_fraction must be in (0,1]");
  if (!(l2_reg >= 0)) throw std::invalid_argument("l2_reg must be >= 0");
  if (!(ridge >= 0)) throw std::invalid_argument("ridge must be >= 0");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

int RegressionTree::leaf_of(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  int i = 0;
  while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    i = x[n.column] < n.threshold ? n.left : n.right;
  }
  return i;
}

int RegressionTree::depth() const {
  std::function<int(int)> rec = [&](int i) -> int {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    return n.is_leaf() ? 0 : 1 + std::max(rec(n.left), rec(n.right));
  };
  return nodes.empty() ? 0 : rec(0);
}

namespace {

void check_training_input(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() < 1) throw std::invalid_argument("training matrix has no rows");
  if (X.rows() != y.size()) throw std::invalid_argument("X rows != y size");
  if (!X.allFinite() || !y.allFinite()) throw std::invalid_argument("training data not finite");
}

using ColumnOrder = std::vector<std::vector<int>>;

// Row indices of every column sorted by value (stable on row index).
ColumnOrder presort(const Eigen::MatrixXd& X) {
  ColumnOrder order(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    auto& idx = order[static_cast<std::size_t>(c)];
    idx.resize(static_cast<std::size_t>(X.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return X(a, c) < X(b, c); });
  }
  return order;
}

struct TreeParams {
  int max_depth = -1;  // negative: unlimited
  double min_leaf = 1;
  double lambda = 0.0;  // 0 gives plain variance-reduction CART
  std::vector<int> columns;
};

// Greedy builder over weighted targets. Node score is G^2 / (W + lambda) with
// G = sum(w * t) and W = sum(w); split gain is the score increase, which for
// lambda = 0 equals the reduction in weighted squared error. Leaf value is
// G / (W + lambda).
class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXd& target,
              const Eigen::VectorXd& weight, const ColumnOrder& order, const TreeParams& params)
      : X_(X), t_(target), w_(weight), params_(params), goes_left_(X.rows(), 0) {
    lists_.reserve(params.columns.size());
    for (int c : params.columns) {
      std::vector<int> l;
      for (int r : order[static_cast<std::size_t>(c)])
        if (w_[r] > 0) l.push_back(r);
      lists_.push_back(std::move(l));
    }
  }

  RegressionTree build() {
    tree_.nodes.clear();
    grow(std::move(lists_), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::vector<int>> lists, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    // totals from any column list (all hold the same rows); fall back to none
    double W = 0, G = 0, S = 0;
    const std::vector<int>* rows = lists.empty() ? nullptr : &lists.front();
    if (rows != nullptr)
      for (int r : *rows) {
        W += w_[r];
        G += w_[r] * t_[r];
        S += w_[r] * t_[r] * t_[r];
      }
    const double lam = params_.lambda;
    tree_.nodes[static_cast<std::size_t>(id)].value = (W + lam) > 0 ? G / (W + lam) : 0.0;

    const bool depth_ok = params_.max_depth < 0 || depth < params_.max_depth;
    if (rows == nullptr || !depth_ok || W < 2 * params_.min_leaf) return id;

    const double parent = G * G / (W + lam);
    double best_gain = 1e-12 * S + 1e-300;
    int best_list = -1;
    double best_threshold = 0;
    for (std::size_t li = 0; li < lists.size(); ++li) {
      const int c = params_.columns[li];
      const auto& l = lists[li];
      double wl = 0, gl = 0;
      for (std::size_t i = 0; i + 1 < l.size(); ++i) {
        const int r = l[i];
        wl += w_[r];
        gl += w_[r] * t_[r];
        const double x = X_(r, c), x_next = X_(l[i + 1], c);
        if (x == x_next) continue;
        const double wr = W - wl;
        if (wl < params_.min_leaf || wr < params_.min_leaf) continue;
        const double gr = G - gl;
        const double gain = gl * gl / (wl + lam) + gr * gr / (wr + lam) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_list = static_cast<int>(li);
          best_threshold = x + (x_next - x) / 2;
          if (!(best_threshold > x)) best_threshold = x_next;  // adjacent doubles
        }
      }
    }
    if (best_list < 0) return id;

    const int col = params_.columns[static_cast<std::size_t>(best_list)];
    for (int r : lists[static_cast<std::size_t>(best_list)])
      goes_left_[static_cast<std::size_t>(r)] = X_(r, col) < best_threshold;
    std::vector<std::vector<int>> left(lists.size()), right(lists.size());
    for (std::size_t li = 0; li < lists.size(); ++li) {
      for (int r : lists[li]) (goes_left_[static_cast<std::size_t>(r)] ? left : right)[li].push_back(r);
      std::vector<int>().swap(lists[li]);
    }
    const int l_id = grow(std::move(left), depth + 1);
    const int r_id = grow(std::move(right), depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.column = col;
    node.threshold = best_threshold;
    node.left = l_id;
    node.right = r_id;
    return id;
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXd& t_;
  const Eigen::VectorXd& w_;
  TreeParams params_;
  std::vector<char> goes_left_;
  std::vector<std::vector<int>> lists_;
  RegressionTree tree_;
};

std::vector<int> all_columns(Eigen::Index d) {
  std::vector<int> c(static_cast<std::size_t>(d));
  std::iota(c.begin(), c.end(), 0);
  return c;
}

TrainedModel ensemble_shell(ModelKind kind, const Eigen::MatrixXd& X, std::uint64_t fp) {
  TrainedModel m;
  m.kind = kind;
  m.fingerprint = fp;
  m.n_cols = static_cast<int>(X.cols());
  return m;
}

}  // namespace

TrainedModel fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const ModelConfig& cfg, std::uint64_t fingerprint) {
  check_training_input(X, y);
  cfg.validate();
  TrainedModel m;
  m.kind = ModelKind::Linear;
  m.fingerprint = fingerprint;
  m.n_cols = static_cast<int>(X.cols());
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const double y_mean = y.mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mu;
  const Eigen::VectorXd yc = y.array() - y_mean;
  if (cfg.ridge > 0) {
    Eigen::MatrixXd A = Xc.transpose() * Xc;
    A.diagonal().array() += cfg.ridge;
    m.coef = A.ldlt().solve(Xc.transpose() * yc);
  } else {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xc);
    if (qr.rank() < Xc.cols()) throw SingularSystem("least-squares system is rank deficient");
    m.coef = qr.solve(yc);
  }
  if (!m.coef.allFinite()) throw SingularSystem("least-squares solution is not finite");
  m.intercept = y_mean - mu.dot(m.coef);
  return m;
}

TrainedModel fit_regression_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const ModelConfig& cfg, std::uint64_t fingerprint) {
  check_training_input(X, y);
  cfg.validate();
  auto m = ensemble_shell(ModelKind::Tree, X, fingerprint);
  TreeParams p;
  p.max_depth = cfg.effective_max_depth();
  p.min_leaf = cfg.min_samples_leaf;
  p.columns = all_columns(X.cols());
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(y.size());
  const auto order = presort(X);
  m.trees.push_back(TreeBuilder(X, y, w, order, p).build());
  return m;
}

TrainedModel fit_random_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const ModelConfig& cfg, std::uint64_t fingerprint) {
  check_training_input(X, y);
  cfg.validate();
  auto m = ensemble_shell(ModelKind::Forest, X, fingerprint);
  m.tree_weight = 1.0 / cfg.n_estimators;
  m.trees.resize(static_cast<std::size_t>(cfg.n_estimators));
  const auto order = presort(X);
  const auto n = X.rows();
  const auto d = X.cols();

  auto build_one = [&](int t) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(t)));
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    if (cfg.bootstrap) {
      for (Eigen::Index i = 0; i < n; ++i) w[static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)))] += 1;
    } else {
      w.setOnes();
    }
    TreeParams p;
    p.max_depth = cfg.effective_max_depth();
    p.min_leaf = cfg.min_samples_leaf;
    p.columns = all_columns(d);
    if (cfg.feature_fraction < 1.0) {
      const auto k = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(cfg.feature_fraction * static_cast<double>(d))));
      rng.shuffle(p.columns.begin(), p.columns.end());
      p.columns.resize(k);
      std::sort(p.columns.begin(), p.columns.end());
    }
    m.trees[static_cast<std::size_t>(t)] = TreeBuilder(X, y, w, order, p).build();
  };

  const int threads = std::min(cfg.threads, cfg.n_estimators);
  if (threads <= 1) {
    for (int t = 0; t < cfg.n_estimators; ++t) build_one(t);
  } else {
    std::vector<std::jthread> pool;
    for (int k = 0; k < threads; ++k)
      pool.emplace_back([&, k] {
        for (int t = k; t < cfg.n_estimators; t += threads) build_one(t);
      });
  }
  return m;
}

TrainedModel fit_gradient_boosting(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const ModelConfig& cfg, std::uint64_t fingerprint,
                                   std::vector<double>* stage_loss) {
  check_training_input(X, y);
  cfg.validate();
  if (cfg.kind != ModelKind::Boost && cfg.kind != ModelKind::Boost2)
    throw std::invalid_argument("fit_gradient_boosting needs kind boost or boost2");
  auto m = ensemble_shell(cfg.kind, X, fingerprint);
  m.base = y.mean();
  m.tree_weight = cfg.learning_rate;
  const auto n = X.rows();
  const auto order = presort(X);
  TreeParams p;
  p.max_depth = cfg.effective_max_depth();
  p.min_leaf = cfg.min_samples_leaf;
  p.lambda = cfg.kind == ModelKind::Boost2 ? cfg.l2_reg : 0.0;
  p.columns = all_columns(X.cols());

  Eigen::VectorXd F = Eigen::VectorXd::Constant(n, m.base);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  std::vector<int> rows(static_cast<std::size_t>(n));
  const auto n_sub = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::floor(cfg.subsample * static_cast<double>(n))));
  if (stage_loss != nullptr) stage_loss->assign(1, (y - F).squaredNorm() / static_cast<double>(n));
  for (int stage = 0; stage < cfg.n_estimators; ++stage) {
    // squared loss: negative gradient is the residual, hessian is 1
    const Eigen::VectorXd residual = y - F;
    if (cfg.subsample < 1.0) {
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(stage)));
      std::iota(rows.begin(), rows.end(), 0);
      rng.shuffle(rows.begin(), rows.end());
      w.setZero();
      for (Eigen::Index i = 0; i < n_sub; ++i) w[rows[static_cast<std::size_t>(i)]] = 1.0;
    }
    auto tree = TreeBuilder(X, residual, w, order, p).build();
    for (Eigen::Index i = 0; i < n; ++i) F[i] += cfg.learning_rate * tree.predict(X.row(i));
    m.trees.push_back(std::move(tree));
    if (stage_loss != nullptr)
      stage_loss->push_back((y - F).squaredNorm() / static_cast<double>(n));
  }
  return m;
}

TrainedModel fit_model(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ModelConfig& cfg,
                       std::uint64_t fingerprint) {
  switch (cfg.kind) {
    case ModelKind::Linear: return fit_linear(X, y, cfg, fingerprint);
    case ModelKind::Tree: return fit_regression_tree(X, y, cfg, fingerprint);
    case ModelKind::Forest: return fit_random_forest(X, y, cfg, fingerprint);
    case ModelKind::Boost:
    case ModelKind::Boost2: return fit_gradient_boosting(X, y, cfg, fingerprint);
  }
  throw std::invalid_argument("unknown model kind");
}

Eigen::VectorXd TrainedModel::predict(const Eigen::MatrixXd& X, std::uint64_t fingerprint_) const {
  if (fingerprint_ != fingerprint) throw SchemaMismatch("schema fingerprint does not match model");
  if (X.rows() == 0) return Eigen::VectorXd(0);
  if (X.cols() != n_cols)
    throw SchemaMismatch("model expects " + std::to_string(n_cols) + " columns, got " +
                         std::to_string(X.cols()));
  if (kind == ModelKind::Linear) return (X * coef).array() + intercept;
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(X.row(i));
    out[i] = base + tree_weight * s;
  }
  return out;
}

void TrainedModel::save(std::ostream& out) const {
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(fingerprint));
  out << "blife-model 1\n"
      << "kind " << to_string(kind) << '\n'
      << "fingerprint " << fp << '\n'
      << "n_cols " << n_cols << '\n'
      << "intercept " << format_double(intercept) << '\n'
      << "coef " << coef.size();
  for (Eigen::Index i = 0; i < coef.size(); ++i) out << ' ' << format_double(coef[i]);
  out << '\n'
      << "base " << format_double(base) << '\n'
      << "tree_weight " << format_double(tree_weight) << '\n'
      << "trees " << trees.size() << '\n';
  for (const auto& t : trees) {
    out << "tree " << t.nodes.size() << '\n';
    for (const auto& n : t.nodes)
      out << n.column << ' ' << format_double(n.threshold) << ' ' << n.left << ' ' << n.right
          << ' ' << format_double(n.value) << '\n';
  }
}

TrainedModel TrainedModel::load(std::istream& in) {
  auto fail = [](const std::string& what) -> std::runtime_error {
    return std::runtime_error("model file: " + what);
  };
  std::string tok, header;
  std::getline(in, header);
  if (header != "blife-model 1") throw fail("unsupported version line");
  auto expect = [&](const char* key) {
    if (!(in >> tok) || tok != key) throw fail(std::string("expected `") + key + "`");
  };
  auto read_double = [&]() {
    if (!(in >> tok)) throw fail("truncated");
    const auto v = parse_double(tok);
    if (!v) throw fail("bad number `" + tok + "`");
    return *v;
  };
  TrainedModel m;
  expect("kind");
  in >> tok;
  m.kind = parse_model_kind(tok);
  expect("fingerprint");
  in >> tok;
  m.fingerprint = std::stoull(tok, nullptr, 16);
  expect("n_cols");
  in >> m.n_cols;
  expect("intercept");
  m.intercept = read_double();
  expect("coef");
  Eigen::Index nc = 0;
  in >> nc;
  m.coef.resize(nc);
  for (Eigen::Index i = 0; i < nc; ++i) m.coef[i] = read_double();
  expect("base");
  m.base = read_double();
  expect("tree_weight");
  m.tree_weight = read_double();
  expect("trees");
  std::size_t nt = 0;
  in >> nt;
  m.trees.resize(nt);
  for (auto& t : m.trees) {
    expect("tree");
    std::size_t nn = 0;
    in >> nn;
    t.nodes.resize(nn);
    for (auto& node : t.nodes) {
      in >> node.column;
      node.threshold = read_double();
      in >> node.left >> node.right;
      node.value = read_double();
    }
  }
  if (!in) throw fail("truncated");
  return m;
}

}  // namespace blife
