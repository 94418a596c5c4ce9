#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "blife/models.hpp"
#include "blife/rng.hpp"

using namespace blife;

namespace {

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

ModelConfig config(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  return c;
}

// y = x^2 on a grid over [-1, 1]
void parabola(Eigen::MatrixXd& X, Eigen::VectorXd& y, int n = 201) {
  X.resize(n, 1);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = -1.0 + 2.0 * i / (n - 1);
    y[i] = X(i, 0) * X(i, 0);
  }
}

// Best single split by exhaustive search: minimal summed squared error.
double best_split_sse(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int min_leaf) {
  double best = (y.array() - y.mean()).square().sum();
  for (Eigen::Index c = 0; c < X.cols(); ++c)
    for (Eigen::Index k = 0; k < X.rows(); ++k) {
      const double thr = X(k, c);
      double sl = 0, sr = 0, ql = 0, qr = 0;
      int nl = 0, nr = 0;
      for (Eigen::Index i = 0; i < X.rows(); ++i) {
        if (X(i, c) < thr) sl += y[i], ql += y[i] * y[i], ++nl;
        else sr += y[i], qr += y[i] * y[i], ++nr;
      }
      if (nl < min_leaf || nr < min_leaf) continue;
      best = std::min(best, ql - sl * sl / nl + qr - sr * sr / nr);
    }
  return best;
}

}  // namespace

TEST_CASE("model kind names") {
  for (auto k : {ModelKind::Linear, ModelKind::Tree, ModelKind::Forest, ModelKind::Boost, ModelKind::Boost2})
    CHECK(parse_model_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_model_kind("svm"), std::invalid_argument);
}

TEST_CASE("linear recovers exact coefficients") {
  Eigen::MatrixXd X(50, 1);
  Eigen::VectorXd y(50);
  for (int i = 0; i < 50; ++i) {
    X(i, 0) = i * 0.37 - 4;
    y[i] = 3 * X(i, 0) + 1;
  }
  auto c = config(ModelKind::Linear);
  c.ridge = 0;
  const auto m = fit_linear(X, y, c);
  CHECK(m.coef[0] == doctest::Approx(3).epsilon(1e-9));
  CHECK(m.intercept == doctest::Approx(1).epsilon(1e-9));
  c.ridge = 1e-8;
  const auto r = fit_linear(X, y, c);
  CHECK(std::abs(r.coef[0] - 3) < 1e-6);
  CHECK(std::abs(r.intercept - 1) < 1e-6);
}

TEST_CASE("linear degenerate inputs") {
  Eigen::MatrixXd X(10, 2);
  Eigen::VectorXd y = Eigen::VectorXd::Constant(10, 4.5);
  for (int i = 0; i < 10; ++i) X(i, 0) = X(i, 1) = i;
  const auto m = fit_linear(X, y, config(ModelKind::Linear));
  CHECK(m.coef.allFinite());
  CHECK(std::abs(m.coef[0]) < 1e-9);
  CHECK(m.intercept == doctest::Approx(4.5));

  for (int i = 0; i < 10; ++i) y[i] = 2.0 * i;
  const auto dup = fit_linear(X, y, config(ModelKind::Linear));
  CHECK(dup.coef.allFinite());
  const auto pred = dup.predict(X, 0);
  CHECK(rmse(pred, y) < 1e-4);
  auto exact = config(ModelKind::Linear);
  exact.ridge = 0;
  CHECK_THROWS_AS(fit_linear(X, y, exact), SingularSystem);
}

TEST_CASE("tree depth one finds the step") {
  Eigen::MatrixXd X(40, 1);
  Eigen::VectorXd y(40);
  for (int i = 0; i < 40; ++i) {
    X(i, 0) = i - 20;
    y[i] = X(i, 0) < 0 ? -2.0 : 5.0;
  }
  auto c = config(ModelKind::Tree);
  c.max_depth = 1;
  const auto m = fit_regression_tree(X, y, c);
  REQUIRE(m.trees.size() == 1);
  CHECK(m.trees[0].nodes.size() == 3);
  CHECK(m.trees[0].depth() == 1);
  CHECK(rmse(m.predict(X, 0), y) == 0.0);
}

TEST_CASE("tree split matches exhaustive search") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 20 + static_cast<int>(rng.below(60));
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) X(i, c) = std::round(rng.normal() * 4);
      y[i] = X(i, 1) > 0 ? 3 + rng.normal() : rng.normal();
    }
    auto c = config(ModelKind::Tree);
    c.max_depth = 1;
    c.min_samples_leaf = 3;
    const auto m = fit_regression_tree(X, y, c);
    const double got = (m.predict(X, 0) - y).squaredNorm();
    CHECK(got == doctest::Approx(best_split_sse(X, y, 3)).epsilon(1e-9));
  }
}

TEST_CASE("tree stopping rules") {
  Eigen::MatrixXd X(9, 1);
  Eigen::VectorXd y(9);
  for (int i = 0; i < 9; ++i) X(i, 0) = i, y[i] = i * i;
  auto c = config(ModelKind::Tree);
  c.min_samples_leaf = 5;
  const auto small = fit_regression_tree(X, y, c);
  CHECK(small.trees[0].nodes.size() == 1);
  CHECK(small.trees[0].nodes[0].value == doctest::Approx(y.mean()));
  const auto flat = fit_regression_tree(X, Eigen::VectorXd::Constant(9, 7), config(ModelKind::Tree));
  CHECK(flat.trees[0].nodes.size() == 1);
  CHECK(flat.trees[0].nodes[0].value == 7);
}

TEST_CASE("unlimited tree memorizes distinct rows") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  parabola(X, y, 64);
  auto c = config(ModelKind::Tree);
  c.min_samples_leaf = 1;
  const auto m = fit_regression_tree(X, y, c);
  CHECK((m.predict(X, 0) - y).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("forest reductions") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  parabola(X, y);
  auto c = config(ModelKind::Forest);
  c.bootstrap = false;
  c.n_estimators = 1;
  const auto one = fit_random_forest(X, y, c);
  const auto tree = fit_regression_tree(X, y, config(ModelKind::Tree));
  CHECK(one.predict(X, 0) == tree.predict(X, 0));
  c.n_estimators = 4;
  const auto four = fit_random_forest(X, y, c);
  CHECK((four.predict(X, 0) - tree.predict(X, 0)).cwiseAbs().maxCoeff() < 1e-12);

  auto flat = config(ModelKind::Forest);
  flat.n_estimators = 10;
  const auto k = fit_random_forest(X, Eigen::VectorXd::Constant(y.size(), 3.25), flat);
  CHECK((k.predict(X, 0).array() - 3.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("forest is reproducible across thread counts") {
  Rng rng(8);
  Eigen::MatrixXd X(150, 4);
  Eigen::VectorXd y(150);
  for (int i = 0; i < 150; ++i) {
    for (int c = 0; c < 4; ++c) X(i, c) = rng.normal();
    y[i] = X(i, 0) * X(i, 1) + rng.normal() * 0.1;
  }
  auto c = config(ModelKind::Forest);
  c.n_estimators = 12;
  c.feature_fraction = 0.5;
  c.seed = 99;
  const auto a = fit_random_forest(X, y, c);
  const auto b = fit_random_forest(X, y, c);
  c.threads = 4;
  const auto t = fit_random_forest(X, y, c);
  CHECK(a.predict(X, 0) == b.predict(X, 0));
  CHECK(a.predict(X, 0) == t.predict(X, 0));
  c.seed = 100;
  CHECK(fit_random_forest(X, y, c).predict(X, 0) != a.predict(X, 0));
}

TEST_CASE("one boosting stage is the mean plus a residual tree") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  parabola(X, y);
  auto c = config(ModelKind::Boost);
  c.learning_rate = 1.0;
  c.n_estimators = 1;
  c.max_depth = -1;
  const auto b = fit_gradient_boosting(X, y, c);
  auto tc = config(ModelKind::Tree);
  const auto t = fit_regression_tree(X, (y.array() - y.mean()).matrix(), tc);
  const Eigen::VectorXd expect = (t.predict(X, 0).array() + y.mean()).matrix();
  CHECK((b.predict(X, 0) - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(rmse(b.predict(X, 0), y) <= rmse(fit_regression_tree(X, y, tc).predict(X, 0), y) + 1e-12);
}

TEST_CASE("boosting beats a line on a parabola") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  parabola(X, y);
  const auto lin = fit_linear(X, y, config(ModelKind::Linear));
  for (auto kind : {ModelKind::Boost, ModelKind::Boost2}) {
    const auto b = fit_gradient_boosting(X, y, config(kind));
    CHECK(rmse(b.predict(X, 0), y) < 0.5 * rmse(lin.predict(X, 0), y));
  }
}

TEST_CASE("boosting training loss never increases") {
  Rng rng(3);
  Eigen::MatrixXd X(300, 3);
  Eigen::VectorXd y(300);
  for (int i = 0; i < 300; ++i) {
    for (int c = 0; c < 3; ++c) X(i, c) = rng.uniform(-2, 2);
    y[i] = std::sin(X(i, 0)) * 5 + X(i, 2) + rng.normal() * 0.3;
  }
  for (auto kind : {ModelKind::Boost, ModelKind::Boost2}) {
    std::vector<double> loss;
    fit_gradient_boosting(X, y, config(kind), 0, &loss);
    REQUIRE(loss.size() == 101);
    for (std::size_t i = 1; i < loss.size(); ++i) CHECK(loss[i] <= loss[i - 1] + 1e-12);
  }
}

TEST_CASE("heavy leaf penalty shrinks boost2 to the mean") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  parabola(X, y);
  auto c = config(ModelKind::Boost2);
  c.l2_reg = 1e12;
  const auto m = fit_gradient_boosting(X, y, c);
  CHECK((m.predict(X, 0).array() - y.mean()).abs().maxCoeff() < 1e-6);
}

TEST_CASE("subsampled boosting is seeded") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  parabola(X, y);
  auto c = config(ModelKind::Boost);
  c.subsample = 0.5;
  c.seed = 4;
  CHECK(fit_model(X, y, c).predict(X, 0) == fit_model(X, y, c).predict(X, 0));
}

TEST_CASE("prediction contract") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  parabola(X, y);
  const auto m = fit_model(X, y, config(ModelKind::Boost), 77);
  CHECK(m.predict(Eigen::MatrixXd(0, 1), 77).size() == 0);
  CHECK_THROWS_AS(m.predict(X, 78), SchemaMismatch);
  CHECK_THROWS_AS(m.predict(Eigen::MatrixXd::Zero(3, 2), 77), SchemaMismatch);
  CHECK_THROWS_AS(fit_model(Eigen::MatrixXd(0, 1), Eigen::VectorXd(0), config(ModelKind::Boost)),
                  std::invalid_argument);
  Eigen::MatrixXd bad = X;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(fit_model(bad, y, config(ModelKind::Linear)), std::invalid_argument);
  auto c = config(ModelKind::Boost);
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("save and load keep predictions bit-identical") {
  Rng rng(12);
  Eigen::MatrixXd X(120, 3);
  Eigen::VectorXd y(120);
  for (int i = 0; i < 120; ++i) {
    for (int c = 0; c < 3; ++c) X(i, c) = rng.normal();
    y[i] = X(i, 0) - 2 * X(i, 1) * X(i, 2);
  }
  for (auto kind : {ModelKind::Linear, ModelKind::Tree, ModelKind::Forest, ModelKind::Boost, ModelKind::Boost2}) {
    auto c = config(kind);
    c.n_estimators = 20;
    const auto m = fit_model(X, y, c, 5);
    std::stringstream io;
    m.save(io);
    const auto back = TrainedModel::load(io);
    CHECK(back.kind == kind);
    CHECK(back.predict(X, 5) == m.predict(X, 5));
  }
  std::stringstream junk("not a model");
  CHECK_THROWS(TrainedModel::load(junk));
}
