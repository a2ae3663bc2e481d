#include <doctest.h>

#include <numbers>

#include "acpgn/crr.hpp"
#include "acpgn/oracles.hpp"
#include "acpgn/stats.hpp"
#include "test_util.hpp"

using namespace acpgn;

namespace {

class FailingRetrainer final : public Retrainer {
 public:
  Vector fit(const Matrix&, const Vector&) const override { throw Error("boom"); }
  Vector predict(const Vector&, const Matrix& inputs) const override { return Vector::Zero(inputs.rows()); }
};

double golden_section_max(auto f, double lo, double hi) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  for (int it = 0; it < 200; ++it) {
    const double c = b - g * (b - a), d = a + g * (b - a);
    if (f(c) > f(d)) b = d;
    else a = c;
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST_SUITE("oracles") {
  TEST_CASE("grid full CP with ridge equals the exact RRCM set on the grid") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix x = testing::random_matrix(25, 3, rng);
      const Vector y = x * testing::random_vector(3, rng) + testing::random_vector(25, rng, 0.5);
      const Vector xn = testing::random_vector(3, rng);
      const double delta = 0.5;
      const CrrCoefficients c = exact_ridge_coeffs(x, y, xn, delta);
      const PredictionSet exact = conformal_set(c, 0.2, SetPipeline::absolute);
      auto grid = label_grid(y, 80);
      const FullCpResult res = full_cp_grid(RidgeRetrainer(delta), x, y, xn, grid, 0.2);
      REQUIRE(res.accepted.size() == 80);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const double yk = grid[k];
        // Skip labels that sit on a changepoint.
        bool near = false;
        for (double cp : exact.changepoints) near = near || std::abs(cp - yk) < 1e-7;
        if (near) continue;
        CHECK(res.accepted[k] == exact.contains(yk));
      }
    }
  }

  TEST_CASE("grid full CP edge cases") {
    std::mt19937_64 rng(2);
    const Matrix x = testing::random_matrix(20, 2, rng);
    const Vector y = testing::random_vector(20, rng);
    const Vector xn = testing::random_vector(2, rng);
    const RidgeRetrainer ridge(1.0);

    // The training-only prediction leaves theta unchanged, so its residual is zero.
    const double f = xn.dot(ridge.fit(x, y));
    const FullCpResult at_f = full_cp_grid(ridge, x, y, xn, {f}, 0.5);
    CHECK(at_f.rank[0] == 1);
    CHECK(at_f.accepted[0]);

    // alpha close to 1: threshold ceil(0.01 * 21) = 1.
    const FullCpResult strict = full_cp_grid(ridge, x, y, xn, label_grid(y, 30), 0.99);
    for (std::size_t k = 0; k < strict.grid.size(); ++k) CHECK(strict.accepted[k] == (strict.rank[k] <= 1));

    try {
      full_cp_grid(FailingRetrainer(), x, y, xn, {0.25}, 0.1);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("y=0.25") != std::string::npos);
    }
    CHECK_THROWS(full_cp_grid(ridge, x, y, xn, {1.0, 0.0}, 0.1));
    CHECK_THROWS(RidgeRetrainer(0.0));
  }

  TEST_CASE("label grid and grid sets") {
    Vector y(3);
    y << 2.0, -1.0, 5.0;
    const auto g = label_grid(y, 4);
    REQUIRE(g.size() == 4);
    CHECK(g.front() == -1.0);
    CHECK(g.back() == 5.0);
    CHECK(g[1] == doctest::Approx(1.0));
    CHECK(label_grid(y, 1)[0] == 2.0);
    CHECK_THROWS(label_grid(y, 0));

    FullCpResult r;
    r.grid = g;
    r.accepted = {false, true, true, false};
    r.rank = {5, 1, 2, 6};
    CHECK(r.accepted_labels() == std::vector<double>{1.0, 3.0});
    const PredictionSet ps = r.as_set(0.1);
    REQUIRE(ps.per_output[0].size() == 1);
    CHECK(ps.per_output[0][0].lo == doctest::Approx(0.0));
    CHECK(ps.per_output[0][0].hi == doctest::Approx(4.0));
  }

  TEST_CASE("noise variance estimate") {
    Vector r(3);
    r << 1.0, -1.0, 2.0;
    CHECK(la_fit_sigma2(r) == doctest::Approx(2.0));
    CHECK(la_fit_sigma2(Vector::Zero(4)) == 1e-12);
    CHECK_THROWS(la_fit_sigma2(Vector()));

    std::mt19937_64 rng(3);
    const Vector res = testing::random_vector(50, rng, 1.7);
    const auto loglik = [&](double s2) {
      return -0.5 * static_cast<double>(res.size()) * std::log(s2) - 0.5 * res.squaredNorm() / s2;
    };
    CHECK(la_fit_sigma2(res) == doctest::Approx(golden_section_max(loglik, 1e-3, 50.0)).epsilon(1e-6));

    const MlpModel m = MlpModel::init({1, 3, 1}, 1);
    const Matrix x = testing::random_matrix(10, 1, rng);
    const Matrix y = forward_batch(m, x).array() + 2.0;
    CHECK(la_fit_sigma2(m, x, y) == doctest::Approx(4.0));
  }

  TEST_CASE("Laplace interval") {
    const PredictionSet one = la_interval(3.0, 0.0, 1.0, 0.3174);
    CHECK(one.per_output[0][0].hi - 3.0 == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(one.per_output[0][0].lo == doctest::Approx(2.0).epsilon(1e-3));
    double prev = 0.0;
    for (double h : {0.0, 0.5, 2.0}) {
      const double w = la_interval(0.0, h, 1.0, 0.1).length();
      CHECK(w > prev);
      prev = w;
    }
    CHECK(la_interval(0.0, 3.0, 0.25, 0.1).length() ==
          doctest::Approx(2.0 * stats::normal_quantile(0.95) * std::sqrt(0.25 * 4.0)));
  }

  TEST_CASE("Laplace coverage on a conjugate linear-Gaussian model") {
    // Prior theta ~ N(0, sigma2 / delta I) and noise sigma2 make the Laplace
    // predictive exact.
    std::mt19937_64 rng(4);
    const double sigma2 = 0.5, delta = 2.0, alpha = 0.1;
    const int trials = 4000;
    int covered = 0;
    for (int t = 0; t < trials; ++t) {
      const Vector theta = testing::random_vector(4, rng, std::sqrt(sigma2 / delta));
      const Matrix x = testing::with_bias(testing::random_matrix(15, 3, rng));
      const Vector y = x * theta + testing::random_vector(15, rng, std::sqrt(sigma2));
      Vector xn(4);
      xn << testing::random_vector(3, rng), 1.0;
      const double yn = xn.dot(theta) + std::sqrt(sigma2) * testing::random_vector(1, rng)(0);
      const MlpModel lin = testing::linear_model(testing::ridge_dense(x, y, delta));
      const GgnState g = build_ggn(lin, x.leftCols(3), delta, GgnMode::full);
      if (la_interval(lin, g, xn.head(3), sigma2, alpha).contains(yn)) ++covered;
    }
    CHECK(static_cast<double>(covered) / trials == doctest::Approx(0.9).epsilon(0.03 / 0.9));
  }

  TEST_CASE("predictive covariance") {
    std::mt19937_64 rng(5);
    const MlpModel m = MlpModel::init({2, 4, 3}, 2);
    const Matrix x = testing::random_matrix(20, 2, rng);
    const GgnState g = build_ggn(m, x, 0.7, GgnMode::full);
    const Vector xn = testing::random_vector(2, rng);
    const LaplacePredictive lp = la_predictive(m, g, xn, 0.3);
    const Matrix j = jacobian(m, xn);
    const Matrix oracle = 0.3 * (Matrix::Identity(3, 3) + j * g.hessian().inverse() * j.transpose());
    CHECK(testing::max_abs(lp.covariance - oracle) <= 1e-9);
    CHECK(testing::max_abs(lp.mean - forward(m, xn)) == 0.0);
    CHECK(lp.outputs() == 3);
  }

  TEST_CASE("ellipsoid volume") {
    CHECK(unit_ball_volume(1) == doctest::Approx(2.0));
    CHECK(unit_ball_volume(2) == doctest::Approx(std::numbers::pi));
    CHECK(unit_ball_volume(3) == doctest::Approx(4.0 * std::numbers::pi / 3.0));

    LaplacePredictive one;
    one.mean = Vector::Zero(1);
    one.covariance = Matrix::Constant(1, 1, 2.5);
    CHECK(ellipsoid_volume(one, 0.1) ==
          doctest::Approx(2.0 * stats::normal_quantile(0.95) * std::sqrt(2.5)).epsilon(1e-10));

    LaplacePredictive two;
    two.mean = Vector::Zero(2);
    two.covariance = Matrix::Identity(2, 2);
    for (double a : {0.05, 0.1, 0.3})
      CHECK(ellipsoid_volume(two, a) == doctest::Approx(std::numbers::pi * (-2.0 * std::log(a))).epsilon(1e-10));
    two.covariance(1, 1) = 0.0;
    CHECK_THROWS(ellipsoid_volume(two, 0.1));
  }

  TEST_CASE("ellipsoid Monte Carlo coverage") {
    std::mt19937_64 rng(6);
    LaplacePredictive lp;
    lp.mean = testing::random_vector(3, rng);
    const Matrix a = testing::random_matrix(3, 3, rng);
    lp.covariance = a * a.transpose() + 0.5 * Matrix::Identity(3, 3);
    const Eigen::LLT<Matrix> chol(lp.covariance);
    const Matrix l = chol.matrixL();
    const int draws = 100000;
    int inside = 0;
    for (int k = 0; k < draws; ++k)
      if (ellipsoid_contains(lp, 0.1, lp.mean + l * testing::random_vector(3, rng))) ++inside;
    CHECK(static_cast<double>(inside) / draws == doctest::Approx(0.9).epsilon(0.01 / 0.9));
  }

  TEST_CASE("warm-started network full CP agrees with ACP-GN on the grid") {
    std::mt19937_64 rng(7);
    const Matrix x = testing::random_matrix(40, 1, rng);
    const Vector y = (x.array().sin()).matrix() + testing::random_vector(40, rng, 0.2);
    TrainConfig cfg;
    cfg.delta = 1.0;
    cfg.epochs = 3000;
    cfg.batch_size = 40;
    const MlpModel net = train(x, y, {1, 10, 1}, cfg).model;
    const GgnState g = build_ggn(net, x, cfg.delta, GgnMode::full);
    const AcpGnContext ctx = make_acp_gn_context(net, g, x, y);
    const WarmStartMlpRetrainer retrainer(net, cfg.delta, 100, 1e-3);

    double jaccard_sum = 0.0;
    const int points = 3;
    for (int p = 0; p < points; ++p) {
      const Vector xn = testing::random_vector(1, rng);
      const CrrCoefficients c = acp_gn_coeffs(ctx, jacobian(net, xn).row(0).transpose(), forward(net, xn)(0));
      const PredictionSet acp = conformal_set(c, 0.2, SetPipeline::absolute);
      const auto grid = label_grid(y, 40);
      const FullCpResult full = full_cp_grid(retrainer, x, y, xn, grid, 0.2);
      int both = 0, either = 0;
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const bool a = acp.contains(grid[k]), b = full.accepted[k];
        both += a && b;
        either += a || b;
      }
      jaccard_sum += either == 0 ? 1.0 : static_cast<double>(both) / either;
    }
    MESSAGE("mean Jaccard " << jaccard_sum / points);
    CHECK(jaccard_sum / points >= 0.7);
  }
}
