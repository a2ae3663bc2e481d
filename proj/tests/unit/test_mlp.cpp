#include <doctest.h>

#include "acpgn/ggn.hpp"
#include "acpgn/mlp.hpp"
#include "test_util.hpp"

using namespace acpgn;

namespace {

MlpModel random_net(std::mt19937_64& rng, Index outputs = 1) {
  std::uniform_int_distribution<int> depth(0, 2), width(1, 20), in(1, 5);
  std::vector<Index> sizes{in(rng)};
  for (int l = depth(rng); l > 0; --l) sizes.push_back(width(rng));
  sizes.push_back(outputs);
  MlpModel m = MlpModel::init(sizes, rng());
  m.theta += testing::random_vector(m.theta.size(), rng, 0.3);
  return m;
}

}  // namespace

TEST_SUITE("mlp") {
  TEST_CASE("parameter count is the sum of (in + 1) * out") {
    CHECK(MlpModel::param_count({3, 5, 2}) == (3 + 1) * 5 + (5 + 1) * 2);
    CHECK(MlpModel::param_count({4, 1}) == 5);
    const MlpModel m = MlpModel::init({2, 7, 7, 3}, 1);
    CHECK(m.num_params() == 3 * 7 + 8 * 7 + 8 * 3);
    CHECK(m.last_layer_offset() == 3 * 7 + 8 * 7);
    CHECK(m.last_layer_width() == 8 * 3);
    CHECK_THROWS(MlpModel::init({3}, 0));
  }

  TEST_CASE("fan-in uniform initialization") {
    const MlpModel m = MlpModel::init({16, 4, 1}, 9);
    CHECK(m.theta.head(16 * 4 + 4).cwiseAbs().maxCoeff() <= 0.25);
    CHECK(m.theta.tail(5).cwiseAbs().maxCoeff() <= 0.5);
    const MlpModel again = MlpModel::init({16, 4, 1}, 9);
    CHECK(testing::max_abs(m.theta - again.theta) == 0.0);
  }

  TEST_CASE("zero network outputs zero") {
    MlpModel m = MlpModel::init({3, 8, 2}, 0);
    m.theta.setZero();
    std::mt19937_64 rng(1);
    for (int k = 0; k < 5; ++k) CHECK(testing::max_abs(forward(m, testing::random_vector(3, rng, 5.0))) == 0.0);
  }

  TEST_CASE("single linear layer is an affine map") {
    Vector theta(4);
    theta << 0.5, -1.0, 2.0, 0.25;
    const MlpModel m = testing::linear_model(theta);
    Vector x(3);
    x << 1.0, 2.0, -3.0;
    CHECK(forward(m, x)(0) == doctest::Approx(0.5 - 2.0 - 6.0 + 0.25));
    CHECK_THROWS(forward(m, Vector::Ones(2)));
  }

  TEST_CASE("gelu limits and derivative") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(gelu(10.0) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(std::abs(gelu(-10.0)) < 1e-20);
    CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429));
    for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
      const double fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
      CHECK(gelu_derivative(x) == doctest::Approx(fd).epsilon(1e-8));
    }
  }

  TEST_CASE("linear model Jacobian is [x, 1]") {
    std::mt19937_64 rng(2);
    const MlpModel m = testing::linear_model(testing::random_vector(5, rng));
    const Vector x = testing::random_vector(4, rng);
    const Matrix j = jacobian(m, x);
    REQUIRE(j.rows() == 1);
    CHECK(testing::max_abs(j.row(0).head(4).transpose() - x) == 0.0);
    CHECK(j(0, 4) == 1.0);
  }

  TEST_CASE("Jacobian matches central finite differences") {
    std::mt19937_64 rng(3);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const MlpModel m = random_net(rng);
      const Vector x = testing::random_vector(m.input_dim(), rng);
      const Matrix fd = testing::fd_jacobian(m, x);
      worst = std::max(worst, testing::max_abs(jacobian(m, x) - fd) / std::max(testing::max_abs(fd), 1e-12));
    }
    CHECK(worst <= 1e-5);
  }

  TEST_CASE("multi-output Jacobian rows match per-output finite differences") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      const MlpModel m = random_net(rng, 4);
      const Vector x = testing::random_vector(m.input_dim(), rng);
      const Matrix j = jacobian(m, x);
      const Matrix fd = testing::fd_jacobian(m, x);
      REQUIRE(j.rows() == 4);
      for (Index o = 0; o < 4; ++o)
        CHECK(testing::max_abs(j.row(o) - fd.row(o)) <= 1e-5 * std::max(1.0, testing::max_abs(fd.row(o))));
    }
  }

  TEST_CASE("stacked Jacobians are point-major and forward_batch matches forward") {
    std::mt19937_64 rng(5);
    const MlpModel m = MlpModel::init({2, 6, 3}, 5);
    const Matrix x = testing::random_matrix(4, 2, rng);
    const Matrix s = stacked_jacobians(m, x);
    const Matrix f = forward_batch(m, x);
    REQUIRE(s.rows() == 12);
    for (Index i = 0; i < 4; ++i) {
      CHECK(testing::max_abs(s.middleRows(i * 3, 3) - jacobian(m, x.row(i).transpose())) == 0.0);
      CHECK(testing::max_abs(f.row(i).transpose() - forward(m, x.row(i).transpose())) == 0.0);
    }
  }

  TEST_CASE("training fits a noiseless linear target") {
    const Index n = 200;
    Matrix x(n, 1);
    for (Index i = 0; i < n; ++i) x(i, 0) = -1.5 + 3.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    const Matrix y = 2.0 * x;
    TrainConfig cfg;
    cfg.delta = 1e-3;
    cfg.seed = 1;
    const auto res = train(x, y, {1, 50, 1}, cfg);
    const double rmse = std::sqrt((forward_batch(res.model, x) - y).squaredNorm() / static_cast<double>(n));
    CHECK(rmse < 0.05);
    REQUIRE(res.loss_history.size() == 500);
    CHECK(res.loss_history.back() <= res.loss_history.front());
    CHECK(res.loss_history.back() == doctest::Approx(objective(res.model, x, y, cfg.delta)));

    // A linear network has the least-squares closed form as its optimum.
    TrainConfig lin = cfg;
    lin.epochs = 2000;
    lin.delta = 0.0;
    const auto fit = train(x, y, {1, 1}, lin);
    const Vector ls = testing::ridge_dense(testing::with_bias(x), y.col(0), 0.0);
    CHECK(testing::max_abs(fit.model.theta - ls) < 1e-3);
  }

  TEST_CASE("larger delta shrinks the parameters") {
    std::mt19937_64 rng(6);
    const Matrix x = testing::random_matrix(60, 2, rng);
    const Matrix y = (x.col(0).array().sin() + 0.1 * testing::random_vector(60, rng).array()).matrix();
    double previous = kInf;
    for (double delta : {1.0, 10.0, 100.0}) {
      TrainConfig cfg;
      cfg.delta = delta;
      cfg.epochs = 300;
      cfg.seed = 2;
      const double norm = train(x, y, {2, 10, 1}, cfg).model.theta.norm();
      CHECK(norm < previous);
      previous = norm;
    }
  }

  TEST_CASE("training is deterministic for a fixed seed") {
    std::mt19937_64 rng(7);
    const Matrix x = testing::random_matrix(50, 3, rng);
    const Matrix y = testing::random_matrix(50, 1, rng);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 16;
    cfg.seed = 99;
    const auto a = train(x, y, {3, 8, 1}, cfg);
    const auto b = train(x, y, {3, 8, 1}, cfg);
    CHECK(testing::max_abs(a.model.theta - b.model.theta) == 0.0);
    cfg.seed = 100;
    CHECK(testing::max_abs(train(x, y, {3, 8, 1}, cfg).model.theta - a.model.theta) > 0.0);
  }

  TEST_CASE("divergence names the epoch") {
    std::mt19937_64 rng(8);
    const Matrix x = testing::random_matrix(20, 2, rng);
    const Matrix y = testing::random_matrix(20, 1, rng);
    TrainConfig cfg;
    cfg.lr_initial = cfg.lr_final = 1e300;
    cfg.cosine = false;
    cfg.epochs = 5;
    try {
      train(x, y, {2, 4, 1}, cfg);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("training diverged at epoch") != std::string::npos);
    }
  }

  TEST_CASE("linear_predict tangency, exactness and second-order error") {
    std::mt19937_64 rng(9);
    const MlpModel m = MlpModel::init({2, 10, 1}, 3);
    const Vector x = testing::random_vector(2, rng);
    const Matrix jac = jacobian(m, x);
    const Vector f = forward(m, x);
    CHECK(testing::max_abs(linear_predict(jac, f, m.theta, m.theta) - f) == 0.0);

    const Vector dir = testing::random_vector(m.theta.size(), rng);
    auto gap = [&](double scale) {
      MlpModel moved = m;
      moved.theta += scale * dir;
      return std::abs(forward(moved, x)(0) - linear_predict(jac, f, m.theta, moved.theta)(0));
    };
    const double ratio = gap(1e-2) / gap(5e-3);
    CHECK(ratio == doctest::Approx(4.0).epsilon(0.1));

    const MlpModel lin = testing::linear_model(testing::random_vector(3, rng));
    const Vector theta = testing::random_vector(3, rng);
    MlpModel moved = lin;
    moved.theta = theta;
    CHECK(linear_predict(jacobian(lin, x), forward(lin, x), lin.theta, theta)(0) ==
          doctest::Approx(forward(moved, x)(0)).epsilon(1e-12));
  }

  TEST_CASE("refine: fixpoint, dense oracle, ridge limit and idempotence") {
    std::mt19937_64 rng(10);
    const Index n = 30, d = 6;
    const Matrix phi = testing::random_matrix(n, d, rng);
    const Vector y = testing::random_vector(n, rng);
    const double delta = 0.7;

    // Exact optimum of a linear model: refinement returns it.
    const Vector opt = testing::ridge_dense(phi, y, delta);
    const GgnState g = build_ggn(phi, delta);
    CHECK((refine(g, phi, opt, y - phi * opt) - opt).norm() <= 1e-8);

    // Arbitrary expansion point: dense normal equations on the pseudo-targets.
    const Vector theta_star = testing::random_vector(d, rng);
    const Vector resid = testing::random_vector(n, rng);
    const Vector pseudo = phi * theta_star + resid;
    const Vector oracle = testing::ridge_dense(phi, pseudo, delta);
    const Vector refined = refine(g, phi, theta_star, resid);
    CHECK((refined - oracle).norm() <= 1e-8);

    // Residuals recomputed with the linearized predictions give the same answer.
    const Vector lin_resid = pseudo - phi * refined;
    CHECK((refine(g, phi, refined, lin_resid) - refined).norm() <= 1e-10);

    const GgnState big = build_ggn(phi, 1e12);
    CHECK(refine(big, phi, theta_star, resid).norm() < 1e-8);

    CHECK_THROWS(refine(g, phi, theta_star, Vector::Zero(n - 1)));
  }

  TEST_CASE("last-layer refinement moves only the output block") {
    std::mt19937_64 rng(11);
    const MlpModel m = MlpModel::init({2, 5, 1}, 4);
    const Matrix x = testing::random_matrix(12, 2, rng);
    const Matrix jac = stacked_jacobians(m, x);
    const GgnState g = build_ggn(jac, 1.0, GgnMode::last_layer, m.last_layer_offset());
    const Vector refined = refine(g, jac, m.theta, testing::random_vector(12, rng));
    const Index off = m.last_layer_offset();
    CHECK(testing::max_abs(refined.head(off) - m.theta.head(off)) == 0.0);
    CHECK(testing::max_abs(refined.tail(m.theta.size() - off) - m.theta.tail(m.theta.size() - off)) > 0.0);
  }

  TEST_CASE("model JSON round trip and validation") {
    const MlpModel m = MlpModel::init({3, 4, 2}, 8);
    const auto j = model_to_json(m);
    CHECK(j.at("format") == "acpgn-mlp");
    CHECK(j.at("version") == 1);
    const MlpModel back = model_from_json(j);
    CHECK(back.layer_sizes == m.layer_sizes);
    CHECK(testing::max_abs(back.theta - m.theta) == 0.0);
    auto bad = j;
    bad["version"] = 99;
    CHECK_THROWS(model_from_json(bad));
    bad = j;
    bad["theta"] = std::vector<double>{1.0, 2.0};
    CHECK_THROWS(model_from_json(bad));
  }
}
