#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nlmr/basis.hpp"
#include "nlmr/linmod.hpp"
#include "support.hpp"

using namespace nlmr;
using nlmr::testing::random_normal;
using nlmr::testing::random_vec;
using nlmr::testing::with_intercept;

namespace {

// Plain damped Newton for the unpenalized logistic MLE, solved with a full
// pivoting LU so it shares no code path with penalized_irls.
Vec newton_logistic(const Mat& d, const Vec& y) {
  Vec b = Vec::Zero(d.cols());
  auto loglik = [&](const Vec& beta) {
    double ll = 0.0;
    const Vec eta = d * beta;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - std::log1p(std::exp(eta(i)));
    return ll;
  };
  for (int it = 0; it < 200; ++it) {
    const Vec eta = d * b;
    const Vec mu = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
    const Vec grad = d.transpose() * (y - mu);
    const Mat info = d.transpose() * (mu.array() * (1.0 - mu.array())).matrix().asDiagonal() * d;
    Vec step = info.fullPivLu().solve(grad);
    double t = 1.0;
    while (loglik(b + t * step) < loglik(b) && t > 1e-8) t *= 0.5;
    b += t * step;
    if (step.norm() * t < 1e-13) break;
  }
  return b;
}

}  // namespace

TEST(DesignMatrix, RejectsBadShapesAndLabels) {
  EXPECT_THROW(DesignMatrix(Mat(2, 3)), Error);
  Mat m = Mat::Ones(3, 2);
  EXPECT_THROW(DesignMatrix(m, {"a", "a"}), Error);
  m(0, 0) = std::nan("");
  try {
    DesignMatrix d(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
  }
}

TEST(Ols, IdentityDesign) {
  const LsFit f = ols(DesignMatrix(Mat::Identity(3, 3)), Vec::LinSpaced(3, 1, 3));
  EXPECT_NEAR((f.coef - Vec::LinSpaced(3, 1, 3)).norm(), 0.0, 1e-14);
  EXPECT_NEAR(f.residuals.norm(), 0.0, 1e-14);
  EXPECT_EQ(f.lambda, 0.0);
}

TEST(Ols, ExactLinearRelation) {
  Mat d(4, 1);
  d << 1, 2, 3, 4;
  Vec y(4);
  y << 2, 4, 6, 8;
  const LsFit f = ols(DesignMatrix(d), y);
  EXPECT_NEAR(f.coef(0), 2.0, 1e-14);
  EXPECT_NEAR(f.residuals.norm(), 0.0, 1e-13);
}

TEST(Ols, MatchesNormalEquations) {
  std::mt19937_64 gen(11);
  const Mat d = random_normal(50, 3, gen);
  const Vec y = random_vec(50, gen);
  const LsFit f = ols(DesignMatrix(d), y);
  const Vec oracle = (d.transpose() * d).partialPivLu().solve(d.transpose() * y);
  EXPECT_LT((f.coef - oracle).norm(), 1e-8);
  EXPECT_LT((f.gram_inverse - (d.transpose() * d).inverse()).norm(), 1e-10);
  EXPECT_NEAR(f.sigma2, f.residuals.squaredNorm() / 47.0, 1e-14);
  EXPECT_NEAR(f.edf, 3.0, 1e-10);
}

TEST(Ols, ResidualsOrthogonalToDesign) {
  std::mt19937_64 gen(12);
  for (int rep = 0; rep < 10; ++rep) {
    const Mat d = with_intercept(random_normal(80, 4, gen));
    const Vec y = random_vec(80, gen) * 5.0;
    const LsFit f = ols(DesignMatrix(d), y);
    EXPECT_LT((d.transpose() * f.residuals).norm(), 1e-8 * y.norm());
    EXPECT_LT((f.residuals - (y - d * f.coef)).norm(), 1e-12 * y.norm());
  }
}

TEST(Ols, RankDeficientAndNonFinite) {
  Mat d(5, 2);
  d << 1, 2, 2, 4, 3, 6, 4, 8, 5, 10;
  try {
    ols(DesignMatrix(d), Vec::Ones(5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RankDeficient);
  }
  Vec y = Vec::Ones(5);
  y(2) = INFINITY;
  Mat ok(5, 1);
  ok << 1, 2, 3, 4, 5;
  try {
    ols(DesignMatrix(ok), y);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
  }
}

TEST(PenalizedLs, ZeroLambdaIsOls) {
  std::mt19937_64 gen(13);
  const Mat d = with_intercept(random_normal(40, 3, gen));
  const Vec y = random_vec(40, gen);
  const LsFit a = ols(DesignMatrix(d), y);
  const LsFit b = penalized_ls(DesignMatrix(d), y, diff_penalty(4), 0.0);
  EXPECT_LT((a.coef - b.coef).norm(), 1e-12);
}

TEST(PenalizedLs, InfiniteShrinkage) {
  std::mt19937_64 gen(14);
  const Mat d = random_normal(40, 4, gen);
  const Vec y = random_vec(40, gen);
  const LsFit a = ols(DesignMatrix(d), y);
  const LsFit b = penalized_ls(DesignMatrix(d), y, Mat::Identity(4, 4), 1e12);
  EXPECT_LT(b.coef.norm(), 1e-6 * a.coef.norm());
}

TEST(PenalizedLs, MatchesAugmentedSystem) {
  std::mt19937_64 gen(15);
  const Mat d = random_normal(30, 5, gen);
  const Vec y = random_vec(30, gen);
  const double lambda = 2.5;
  // S = Delta' Delta, so [D; sqrt(lambda) Delta] is an exact square root
  Mat delta = Mat::Zero(3, 5);
  for (int i = 0; i < 3; ++i) {
    delta(i, i) = 1;
    delta(i, i + 1) = -2;
    delta(i, i + 2) = 1;
  }
  Mat aug(33, 5);
  aug << d, std::sqrt(lambda) * delta;
  Vec yaug = Vec::Zero(33);
  yaug.head(30) = y;
  const Vec oracle = aug.colPivHouseholderQr().solve(yaug);
  const LsFit f = penalized_ls(DesignMatrix(d), y, diff_penalty(5), lambda);
  EXPECT_LT((f.coef - oracle).norm(), 1e-10);
  EXPECT_NEAR(f.lambda, lambda, 0.0);
}

TEST(PenalizedLs, NormalEquationsHoldAcrossLambda) {
  std::mt19937_64 gen(16);
  const Mat d = with_intercept(random_normal(60, 6, gen));
  const Vec y = random_vec(60, gen);
  const Mat s = diff_penalty(7);
  for (double lambda : {0.0, 1e-6, 0.1, 1.0, 10.0, 1e4}) {
    const LsFit f = penalized_ls(DesignMatrix(d), y, s, lambda);
    const Vec r = (d.transpose() * d + lambda * s) * f.coef - d.transpose() * y;
    EXPECT_LT(r.norm(), 1e-8 * (d.transpose() * y).norm()) << "lambda " << lambda;
    EXPECT_LE(f.edf, 7.0 + 1e-9);
  }
}

TEST(PenalizedLs, RejectsIndefinitePenaltyAndSingularSystem) {
  Mat d = Mat::Zero(5, 2);
  d.col(0).setOnes();
  Mat bad = Mat::Identity(2, 2);
  bad(1, 1) = -1;
  EXPECT_THROW(penalized_ls(DesignMatrix(Mat::Identity(2, 2)), Vec::Ones(2), bad, 1.0), Error);
  try {
    Mat zero_col(5, 2);
    zero_col << 1, 0, 1, 0, 1, 0, 1, 0, 1, 0;
    Mat s = Mat::Zero(2, 2);
    s(0, 0) = 1;
    penalized_ls(DesignMatrix(zero_col), Vec::Ones(5), s, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularSystem);
  }
}

TEST(Irls, InterceptOnlyBalanced) {
  Vec y(10);
  y << 0, 1, 0, 1, 0, 1, 0, 1, 0, 1;
  const IrlsFit f = penalized_irls(DesignMatrix(Mat::Ones(10, 1)), y, Mat::Zero(1, 1), 0.0);
  EXPECT_TRUE(f.converged);
  EXPECT_NEAR(f.coef(0), 0.0, 1e-12);
}

TEST(Irls, MatchesIndependentNewton) {
  std::mt19937_64 gen(17);
  const Mat d = with_intercept(random_normal(200, 2, gen));
  Vec beta(3);
  beta << -0.3, 0.8, -0.5;
  const Vec eta = d * beta;
  std::uniform_real_distribution<double> unif;
  Vec y(200);
  for (int i = 0; i < 200; ++i) y(i) = unif(gen) < 1.0 / (1.0 + std::exp(-eta(i))) ? 1.0 : 0.0;
  const IrlsFit f = penalized_irls(DesignMatrix(d), y, Mat::Zero(3, 3), 0.0);
  EXPECT_TRUE(f.converged);
  EXPECT_LT((f.coef - newton_logistic(d, y)).norm(), 1e-6);
  for (Eigen::Index i = 0; i < 200; ++i) {
    EXPECT_GT(f.mu(i), 0.0);
    EXPECT_LT(f.mu(i), 1.0);
    EXPECT_DOUBLE_EQ(f.q_diag(i), f.mu(i) * (1.0 - f.mu(i)));
  }
}

TEST(Irls, PenalizedScoreAndMonotoneObjective) {
  std::mt19937_64 gen(18);
  const Mat d = with_intercept(random_normal(300, 5, gen));
  std::bernoulli_distribution coin(0.4);
  Vec y(300);
  for (int i = 0; i < 300; ++i) y(i) = coin(gen) ? 1.0 : 0.0;
  const Mat s = diff_penalty(6);
  for (double lambda : {0.0, 0.5, 20.0}) {
    const IrlsFit f = penalized_irls(DesignMatrix(d), y, s, lambda);
    ASSERT_TRUE(f.converged);
    const Vec score = d.transpose() * (y - f.mu) - lambda * s * f.coef;
    EXPECT_LT(score.norm(), 1e-8 * 300);
    for (std::size_t k = 1; k < f.objective_trace.size(); ++k) {
      EXPECT_LE(f.objective_trace[k], f.objective_trace[k - 1] * (1 + 1e-12));
    }
  }
}

TEST(Irls, SeparationDetected) {
  Mat d(8, 2);
  d.col(0).setOnes();
  d.col(1) << -4, -3, -2, -1, 1, 2, 3, 4;
  Vec y(8);
  y << 0, 0, 0, 0, 1, 1, 1, 1;
  try {
    penalized_irls(DesignMatrix(d), y, Mat::Zero(2, 2), 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::QuasiSeparation);
  }
}

TEST(Irls, NotConvergedCarriesLastIterate) {
  std::mt19937_64 gen(19);
  const Mat d = with_intercept(random_normal(100, 2, gen));
  std::bernoulli_distribution coin(0.5);
  Vec y(100);
  for (int i = 0; i < 100; ++i) y(i) = coin(gen) ? 1.0 : 0.0;
  IrlsOptions opt;
  opt.max_iter = 1;
  try {
    penalized_irls(DesignMatrix(d), y, Mat::Zero(3, 3), 0.0, opt);
    FAIL();
  } catch (const NotConvergedError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotConverged);
    EXPECT_EQ(e.last_iterate().coef.size(), 3);
    EXPECT_FALSE(e.last_iterate().converged);
  }
}

TEST(Irls, RejectsNonBinaryResponse) {
  Vec y(4);
  y << 0, 1, 2, 0;
  EXPECT_THROW(penalized_irls(DesignMatrix(Mat::Ones(4, 1)), y, Mat::Zero(1, 1), 0.0), Error);
}
