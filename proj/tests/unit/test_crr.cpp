#include <doctest.h>

#include <algorithm>

#include "acpgn/crr.hpp"
#include "acpgn/influence.hpp"
#include "test_util.hpp"

using namespace acpgn;

namespace {

struct RidgeInstance {
  Matrix x;
  Vector y;
  Vector x_new;
  double delta;
};

RidgeInstance random_ridge(std::mt19937_64& rng, Index n, Index d) {
  RidgeInstance r;
  r.x = testing::random_matrix(n, d, rng);
  r.y = r.x * testing::random_vector(d, rng) + testing::random_vector(n, rng, 0.5);
  r.x_new = testing::random_vector(d, rng);
  r.delta = testing::uniform(rng, 0.1, 5.0);
  return r;
}

CrrCoefficients ridge_coeffs(const RidgeInstance& r, ScoreVariant v) {
  const CrrCoefficients c = exact_ridge_coeffs(r.x, r.y, r.x_new, r.delta);
  return transform_scores(c, v, augmented_leverages_ridge(r.x, r.x_new, r.delta));
}

// 1 + #{i <= N : |r_i(y)| <= |r_N+1(y)|}, counted directly.
Index brute_rank(const CrrCoefficients& c, double y) {
  const Index n = c.n_train();
  const double test = std::abs(c.a(n) + c.b(n) * y);
  Index r = 1;
  for (Index i = 0; i < n; ++i)
    if (std::abs(c.a(i) + c.b(i) * y) <= test) ++r;
  return r;
}

// Distance from y to the nearest tie |r_i(y)| = |r_N+1(y)|, used to skip
// probes where round-off decides membership.
double tie_margin(const CrrCoefficients& c, double y) {
  const Index n = c.n_train();
  const double test = std::abs(c.a(n) + c.b(n) * y);
  double m = kInf;
  for (Index i = 0; i < n; ++i) m = std::min(m, std::abs(std::abs(c.a(i) + c.b(i) * y) - test));
  return m;
}

}  // namespace

TEST_SUITE("crr") {
  TEST_CASE("exact ridge: zero test input") {
    std::mt19937_64 rng(1);
    const RidgeInstance r = random_ridge(rng, 10, 3);
    const CrrCoefficients c = exact_ridge_coeffs(r.x, r.y, Vector::Zero(3), r.delta);
    const Vector theta = testing::ridge_dense(r.x, r.y, r.delta);
    CHECK(c.a(10) == 0.0);
    CHECK(c.b(10) == 1.0);
    CHECK(testing::max_abs(c.b.head(10)) == 0.0);
    CHECK(testing::max_abs(c.a.head(10) - (r.y - r.x * theta)) <= 1e-10);
  }

  TEST_CASE("exact ridge: residuals match augmented retraining") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      const RidgeInstance r = random_ridge(rng, 30, 5);
      const CrrCoefficients c = exact_ridge_coeffs(r.x, r.y, r.x_new, r.delta);
      CHECK(c.b(30) > 0.0);
      CHECK(c.b(30) <= 1.0);
      for (double y : {-10.0, -1.0, 0.0, 0.5, 7.0}) {
        const Vector theta = testing::ridge_augmented(r.x, r.y, r.x_new, y, r.delta);
        Vector resid(31);
        resid.head(30) = r.y - r.x * theta;
        resid(30) = y - r.x_new.dot(theta);
        CHECK(testing::max_abs(c.a + c.b * y - resid) <= 1e-10 * std::max(1.0, std::abs(y)));
      }
    }
    CHECK_THROWS(exact_ridge_coeffs(Matrix::Ones(2, 2), Vector::Ones(2), Vector::Ones(2), 0.0));
  }

  TEST_CASE("ACP-GN: zero leverage test point") {
    const GgnState g = build_ggn(Matrix::Identity(2, 2), 1.0);
    AcpGnContext ctx = make_acp_gn_context(g, Matrix::Identity(2, 2), Vector::Ones(2), Vector::Zero(2),
                                           Vector::Zero(2));
    const CrrCoefficients c = acp_gn_coeffs(ctx, Vector::Zero(2), 2.0);
    CHECK(c.a(2) == doctest::Approx(-2.0));
    CHECK(c.b(2) == doctest::Approx(1.0));
    CHECK(c.b(0) == 0.0);
    CHECK(c.a(0) == doctest::Approx(1.0));
  }

  TEST_CASE("ACP-GN: uncorrelated training point is decoupled") {
    // H is diagonal, so e_1 and e_2 have zero cross-leverage.
    const GgnState g = build_ggn(Matrix::Identity(2, 2), 1.0);
    const Matrix phi = Vector::Unit(2, 0).transpose();
    const AcpGnContext ctx = make_acp_gn_context(g, phi, Vector::Constant(1, 3.0), Vector::Constant(1, 1.0),
                                                 Vector::Zero(2));
    const CrrCoefficients c = acp_gn_coeffs(ctx, Vector::Unit(2, 1), 0.5);
    CHECK(c.b(0) == 0.0);
    CHECK(c.a(0) == doctest::Approx(2.0));
    CHECK(c.b(1) == doctest::Approx(1.0 / 1.5));
  }

  TEST_CASE("ACP-GN on a linear network equals exact ridge") {
    std::mt19937_64 rng(3);
    const Index n = 25, d = 4;
    const double delta = 0.7;
    const Matrix x = testing::random_matrix(n, d, rng);
    const Vector y = testing::random_vector(n, rng);
    const Matrix feats = testing::with_bias(x);
    const MlpModel lin = testing::linear_model(testing::ridge_dense(feats, y, delta));
    const GgnState g = build_ggn(lin, x, delta, GgnMode::full);
    const AcpGnContext ctx = make_acp_gn_context(lin, g, x, y);
    for (int k = 0; k < 10; ++k) {
      const Vector xn = testing::random_vector(d, rng);
      Vector fn(d + 1);
      fn << xn, 1.0;
      const CrrCoefficients gn = acp_gn_coeffs(ctx, jacobian(lin, xn).row(0).transpose(), forward(lin, xn)(0));
      const CrrCoefficients ex = exact_ridge_coeffs(feats, y, fn, delta);
      CHECK(testing::max_abs(gn.a - ex.a) <= 1e-9);
      CHECK(testing::max_abs(gn.b - ex.b) <= 1e-9);
      CHECK(testing::max_abs(augmented_leverages(ctx, fn) - augmented_leverages_ridge(feats, fn, delta)) <= 1e-9);
    }
  }

  TEST_CASE("ACP-GN residuals are those of the linearized network after the influence update") {
    std::mt19937_64 rng(4);
    const MlpModel net = MlpModel::init({3, 8, 1}, 5);
    const Matrix x = testing::random_matrix(30, 3, rng);
    const Vector y = testing::random_vector(30, rng);
    const Matrix jac = stacked_jacobians(net, x);
    const Vector f = forward_batch(net, x).col(0);
    const GgnState g = build_ggn(jac, 0.5);

    const AcpGnContext ctx = make_acp_gn_context(net, g, x, y);
    const Vector xn = testing::random_vector(3, rng);
    const Vector pn = jacobian(net, xn).row(0).transpose();
    const double fn = forward(net, xn)(0);
    const CrrCoefficients c = acp_gn_coeffs(ctx, pn, fn);
    const AoiUpdate upd = make_aoi_update(g, pn, fn);
    for (double yn : {-3.0, 0.2, 4.5}) {
      const Vector shift = gn_influence(net.theta, upd, yn) - net.theta;
      Vector resid(31);
      resid.head(30) = y - (f + jac * shift);
      resid(30) = yn - (fn + pn.dot(shift));
      CHECK(testing::max_abs(c.a + c.b * yn - resid) <= 1e-9);
    }

    // Refined: expansion around the refitted linearization theta~.
    const AcpGnContext rctx = make_acp_gn_context(net, g, x, y, true);
    CHECK(rctx.source == CoeffSource::refined);
    const Vector tilde = refine(g, jac, net.theta, y - f);
    CHECK(testing::max_abs(rctx.theta_expansion - tilde) <= 1e-12);
    const Matrix jx = jacobian(net, xn);
    const double f_lin = context_prediction(rctx, net, xn, jx);
    CHECK(f_lin == doctest::Approx(fn + pn.dot(tilde - net.theta)));
    const CrrCoefficients rc = acp_gn_coeffs(rctx, pn, f_lin);
    CHECK(rc.source == CoeffSource::refined);
    const AoiUpdate rupd = make_aoi_update(g, pn, f_lin);
    for (double yn : {-3.0, 0.2, 4.5}) {
      const Vector shift = refined_aoi(tilde, rupd, yn) - net.theta;
      Vector resid(31);
      resid.head(30) = y - (f + jac * shift);
      resid(30) = yn - (fn + pn.dot(shift));
      CHECK(testing::max_abs(rc.a + rc.b * yn - resid) <= 1e-9);
    }
  }

  TEST_CASE("transform_scores") {
    CrrCoefficients c;
    c.a = Vector::Ones(2);
    c.b = Vector::Ones(2);
    const Vector hb = Vector::Constant(2, 0.75);
    CHECK(transform_scores(c, ScoreVariant::deleted, hb).a(0) == doctest::Approx(4.0));
    CHECK(transform_scores(c, ScoreVariant::studentized, hb).b(1) == doctest::Approx(2.0));
    const CrrCoefficients same = transform_scores(c, ScoreVariant::standard, hb);
    CHECK(same.a == c.a);
    CHECK(same.b == c.b);

    Vector high(2);
    high << 1.0, 0.5;
    const CrrCoefficients clamped = transform_scores(c, ScoreVariant::deleted, high);
    CHECK(clamped.warnings.size() == 1);
    CHECK(std::isfinite(clamped.a(0)));
    CHECK(clamped.a(0) == doctest::Approx(1e12));

    CHECK_THROWS(transform_scores(clamped, ScoreVariant::deleted, high));
    CHECK_THROWS(transform_scores(c, ScoreVariant::deleted, Vector::Zero(3)));
    CHECK(parse_score_variant("studentized") == ScoreVariant::studentized);
    CHECK_THROWS(parse_score_variant("loo"));
  }

  TEST_CASE("deleted residuals are leave-one-out residuals") {
    std::mt19937_64 rng(5);
    const RidgeInstance r = random_ridge(rng, 15, 3);
    const CrrCoefficients c = ridge_coeffs(r, ScoreVariant::deleted);
    const double yn = 1.3;
    Matrix xa(16, 3);
    xa << r.x, r.x_new.transpose();
    Vector ya(16);
    ya << r.y, yn;
    for (Index i = 0; i < 16; ++i) {
      Matrix xl(15, 3);
      Vector yl(15);
      for (Index j = 0, k = 0; j < 16; ++j)
        if (j != i) {
          xl.row(k) = xa.row(j);
          yl(k++) = ya(j);
        }
      const Vector theta = testing::ridge_dense(xl, yl, r.delta);
      CHECK(c.a(i) + c.b(i) * yn == doctest::Approx(ya(i) - xa.row(i).dot(theta)).epsilon(1e-9));
    }
  }

  TEST_CASE("signed changepoints") {
    CrrCoefficients c;
    c.a = Vector(4);
    c.a << 1.0, 2.0, 3.0, 0.0;
    c.b = Vector(4);
    c.b << 0.0, 0.0, 0.0, 1.0;
    const SignedChangepoints cp = changepoints_signed(c);
    CHECK(cp.lower(0) == 1.0);
    CHECK(cp.upper(2) == 3.0);
    const PredictionSet ps = interval_signed(cp, 0.5, 3);
    REQUIRE(ps.per_output.size() == 1);
    CHECK(ps.per_output[0][0] == Interval{1.0, 3.0});

    c.b(1) = 1.0;  // same slope as the test point
    const SignedChangepoints eq = changepoints_signed(c);
    CHECK(eq.lower(1) == -kInf);
    CHECK(eq.upper(1) == kInf);
  }

  TEST_CASE("signed interval matches direct counting") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      const RidgeInstance r = random_ridge(rng, 19, 3);
      const CrrCoefficients c = exact_ridge_coeffs(r.x, r.y, r.x_new, r.delta);
      const PredictionSet ps = interval_signed(changepoints_signed(c), 0.1, 19);
      // floor(20 * 0.05) = 1 and ceil(20 * 0.95) = 19: the extreme changepoints.
      const SignedChangepoints cp = changepoints_signed(c);
      CHECK(ps.per_output[0][0].lo == cp.lower.minCoeff());
      CHECK(ps.per_output[0][0].hi == cp.upper.maxCoeff());
      for (int k = 0; k < 200; ++k) {
        const double y = testing::uniform(rng, -10.0, 10.0);
        // y is inside when at least one training residual lies on each side
        // of the test residual.
        Index below = 0, above = 0;
        for (Index i = 0; i < 19; ++i) {
          if (c.b(19) - c.b(i) <= kSlopeTol) {
            ++below;
            ++above;
            continue;
          }
          const double diff = (c.a(19) + c.b(19) * y) - (c.a(i) + c.b(i) * y);
          if (diff >= 0) ++below;
          if (diff <= 0) ++above;
        }
        CHECK(ps.contains(y) == (below >= 1 && above >= 1));
      }
    }
  }

  TEST_CASE("signed interval degenerate levels") {
    SignedChangepoints cp{Vector::LinSpaced(5, 1.0, 5.0), Vector::LinSpaced(5, 1.0, 5.0)};
    // floor(6 * 0.05) = 0 and ceil(6 * 0.95) = 6 > 5.
    const PredictionSet wide = interval_signed(cp, 0.1, 5);
    CHECK(wide.per_output[0][0] == Interval{-kInf, kInf});
    const PredictionSet mid = interval_signed(cp, 0.5, 5);
    CHECK(mid.per_output[0][0] == Interval{1.0, 5.0});
    CHECK_THROWS(interval_signed(cp, 0.1, 4));
  }

  TEST_CASE("absolute changepoint shapes") {
    auto one = [](double ai, double bi, double an, double bn) {
      CrrCoefficients c;
      c.a = Vector(2);
      c.a << ai, an;
      c.b = Vector(2);
      c.b << bi, bn;
      return changepoints_absolute(c)[0];
    };
    const AbsoluteSet rays = one(1.0, 0.0, 0.0, 0.5);
    CHECK(rays.shape == SetShape::union_of_rays);
    REQUIRE(rays.pieces.size() == 2);
    CHECK(rays.pieces[0] == Interval{-kInf, -2.0});
    CHECK(rays.pieces[1] == Interval{2.0, kInf});

    const AbsoluteSet iv = one(0.0, 1.0, -1.0, 0.5);
    CHECK(iv.shape == SetShape::interval);
    CHECK(iv.pieces[0].lo == doctest::Approx(-2.0));
    CHECK(iv.pieces[0].hi == doctest::Approx(2.0 / 3.0));

    const AbsoluteSet ray = one(1.0, 0.5, 0.0, 0.5);
    CHECK(ray.shape == SetShape::ray);
    CHECK(ray.pieces[0] == Interval{-kInf, -1.0});
    const AbsoluteSet ray_neg = one(-1.0, -0.5, 0.0, 0.5);  // sign flip of the same residual
    CHECK(ray_neg.pieces[0] == Interval{-kInf, -1.0});

    CHECK(one(1.0, 0.0, 2.0, 0.0).shape == SetShape::full_line);
    CHECK(one(3.0, 0.0, 2.0, 0.0).shape == SetShape::empty);
    CHECK(one(3.0, 0.0, 2.0, 0.0).pieces.empty());
    CHECK(one(1.0, 0.5, 1.0, 0.5).shape == SetShape::full_line);
    CHECK(to_string(SetShape::union_of_rays) == "union_of_rays");
  }

  TEST_CASE("absolute sets match pointwise comparison") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
      CrrCoefficients c;
      c.a = testing::random_vector(11, rng);
      c.b = testing::random_vector(11, rng);
      const auto sets = changepoints_absolute(c);
      for (double y = -20.0; y <= 20.0; y += 0.173)
        for (Index i = 0; i < 10; ++i) {
          const double lhs = std::abs(c.a(i) + c.b(i) * y), rhs = std::abs(c.a(10) + c.b(10) * y);
          if (std::abs(lhs - rhs) < 1e-9) continue;
          CHECK(sets[static_cast<std::size_t>(i)].contains(y) == (lhs <= rhs));
        }
    }
  }

  TEST_CASE("rank sweep and absolute set match brute force") {
    std::mt19937_64 rng(8);
    for (ScoreVariant v : {ScoreVariant::standard, ScoreVariant::deleted, ScoreVariant::studentized}) {
      Index mismatches = 0, checked = 0;
      for (int trial = 0; trial < 50; ++trial) {
        const RidgeInstance r = random_ridge(rng, 40, 4);
        const CrrCoefficients c = ridge_coeffs(r, v);
        const auto sets = changepoints_absolute(c);
        const RankSweep sweep(sets);
        const PredictionSet ps = predset_absolute(sets, 0.1, 40);
        const Index k = conformal_rank_threshold(0.1, 40);
        for (int p = 0; p < 1000; ++p) {
          const double y = testing::uniform(rng, -15.0, 15.0);
          if (tie_margin(c, y) < 1e-9) continue;
          ++checked;
          const Index br = brute_rank(c, y);
          if (sweep.rank_at(y) != br || ps.contains(y) != (br <= k)) ++mismatches;
        }
      }
      CHECK(checked > 45000);
      CHECK(mismatches == 0);
    }
  }

  TEST_CASE("absolute set: boundary cases") {
    std::mt19937_64 rng(9);
    // N = 1: k = ceil(0.9 * 2) = 2 and the rank never exceeds 2.
    const RidgeInstance tiny = random_ridge(rng, 1, 2);
    const PredictionSet all = conformal_set(exact_ridge_coeffs(tiny.x, tiny.y, tiny.x_new, tiny.delta), 0.1,
                                            SetPipeline::absolute);
    CHECK(all.per_output[0].size() == 1);
    CHECK(all.per_output[0][0] == Interval{-kInf, kInf});

    const RidgeInstance r = random_ridge(rng, 50, 3);
    const CrrCoefficients c = ridge_coeffs(r, ScoreVariant::studentized);
    const PredictionSet tiny_alpha = conformal_set(c, 0.01, SetPipeline::absolute);
    CHECK(tiny_alpha.per_output[0][0] == Interval{-kInf, kInf});

    const PredictionSet p10 = conformal_set(c, 0.1, SetPipeline::absolute);
    const PredictionSet p20 = conformal_set(c, 0.2, SetPipeline::absolute);
    CHECK(std::isfinite(p10.per_output[0].front().lo));
    CHECK(std::isfinite(p10.per_output[0].back().hi));
    CHECK(p20.length() <= p10.length());
    for (double y = -15.0; y <= 15.0; y += 0.01)
      if (p20.contains(y)) CHECK(p10.contains(y));
  }

  TEST_CASE("automatic pipeline switches on N") {
    std::mt19937_64 rng(10);
    const RidgeInstance small = random_ridge(rng, 30, 3);
    const CrrCoefficients cs = exact_ridge_coeffs(small.x, small.y, small.x_new, small.delta);
    CHECK(conformal_set(cs, 0.1, SetPipeline::automatic).per_output ==
          conformal_set(cs, 0.1, SetPipeline::absolute).per_output);

    CrrCoefficients big;
    big.a = testing::random_vector(2002, rng);
    big.b = testing::random_vector(2002, rng, 1e-3);
    big.b(2001) = 0.9;
    CHECK(conformal_set(big, 0.1, SetPipeline::automatic).per_output ==
          conformal_set(big, 0.1, SetPipeline::signed_residual).per_output);
    CHECK(conformal_set(big, 0.1, SetPipeline::automatic).per_output !=
          conformal_set(big, 0.1, SetPipeline::absolute).per_output);
  }
}
