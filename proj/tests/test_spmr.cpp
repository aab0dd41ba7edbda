#include <gtest/gtest.h>

#include <algorithm>

#include "nlmr/simkit.hpp"
#include "nlmr/spmr.hpp"
#include "support.hpp"

using namespace nlmr;
using nlmr::testing::kind_of;

namespace {

Scenario spmr_scenario(const std::string& f, int n, double pve, std::uint64_t seed) {
  Scenario sc;
  sc.causal_f = f;
  sc.n = n;
  sc.pve = pve;
  sc.exposure_intercept = 10.0;
  sc.base_seed = seed;
  return sc;
}

Vec sorted(Vec x) {
  std::sort(x.data(), x.data() + x.size());
  return x;
}

Vec centered(const Vec& v) { return (v.array() - v.mean()).matrix(); }

}  // namespace

TEST(Spmr, UnpenalizedFitNestsControlFunction) {
  const DataSet d = gen_dataset(spmr_scenario("sin", 1000, 0.1, 1), 0);
  SpmrOptions opt;
  opt.lambda = 0.0;
  const SpmrFit sp = fit_spmr(d, opt);

  // the same centered basis as an f-basis for the parametric fit
  ModelSpec spec;
  spec.f_basis.clear();
  const SmoothBasis sb = sp.smooth_x().basis;
  for (int j = 0; j < sb.num_coef(); ++j) {
    spec.f_basis.emplace_back("b" + std::to_string(j),
                              [sb, j](double x) { return sb.eval(Vec::Constant(1, x)).design(0, j); });
  }
  spec.g_basis = ModelSpec::linear_covariates(1);
  const FitResult cf = fit_control_function(d, spec);

  ASSERT_EQ(cf.B_hat.size(), sp.B_hat.size());
  EXPECT_LT((cf.B_hat - sp.B_hat).norm(), 1e-8 * sp.B_hat.norm());
  EXPECT_LT((cf.cov.cov - sp.V_B.cov).norm(), 1e-8 * sp.V_B.cov.norm());
  EXPECT_NEAR(sp.rho_hat, cf.rho_hat, 1e-8);
}

TEST(Spmr, EdfWithinBoundsAndDecreasingInLambda) {
  const DataSet d = gen_dataset(spmr_scenario("quad3", 1000, 0.1, 2), 0);
  double last = 1e9;
  for (double log10l = -4.0; log10l <= 6.0; log10l += 1.0) {
    SpmrOptions opt;
    opt.lambda = std::pow(10.0, log10l);
    const SpmrFit f = fit_spmr(d, opt);
    EXPECT_GE(f.edf_x, 1.0);
    EXPECT_LE(f.edf_x, opt.basis.num_basis - 1.0);
    EXPECT_LE(f.edf_x, last + 1e-9);
    last = f.edf_x;
  }
  EXPECT_LT(last, 1.2);
}

TEST(Spmr, CurveIsMeanZeroOnTrainingExposures) {
  const DataSet d = gen_dataset(spmr_scenario("exp3", 1000, 0.1, 3), 0);
  const SpmrFit f = fit_spmr(d);
  const CausalCurve c = causal_curve(f, sorted(d.X));
  EXPECT_NEAR(c.f_hat.mean(), 0.0, 1e-8);
  EXPECT_EQ(c.clamped, 0);
  EXPECT_GT(c.se.minCoeff(), 0.0);
  EXPECT_LT((c.hi95 - c.lo95 - 3.92 * c.se).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(c.reference_centering, "mean-zero");
}

TEST(Spmr, CurveRejectsUnsortedGridAndCountsClamping) {
  const DataSet d = gen_dataset(spmr_scenario("sin", 500, 0.1, 4), 0);
  const SpmrFit f = fit_spmr(d);
  Vec bad(2);
  bad << 2.0, 1.0;
  EXPECT_EQ(kind_of([&] { causal_curve(f, bad); }), ErrorKind::InvalidArgument);
  Vec wide(3);
  wide << d.X.minCoeff() - 1.0, d.X.mean(), d.X.maxCoeff() + 1.0;
  EXPECT_EQ(causal_curve(f, wide).clamped, 2);
}

TEST(Spmr, Reproducible) {
  const DataSet d = gen_dataset(spmr_scenario("sin", 800, 0.1, 5), 0);
  const SpmrFit a = fit_spmr(d);
  const SpmrFit b = fit_spmr(d);
  EXPECT_TRUE((a.B_hat.array() == b.B_hat.array()).all());
  EXPECT_TRUE((a.V_B.cov.array() == b.V_B.cov.array()).all());
  EXPECT_EQ(a.lambdas(), b.lambdas());
}

TEST(Spmr, SelectedLambdaMinimizesGcvOverGrid) {
  const DataSet d = gen_dataset(spmr_scenario("quad3", 1000, 0.1, 6), 0);
  const SpmrFit f = fit_spmr(d);
  const Mat s = detail::embed_penalty(f.smooth_x().basis.penalty, f.smooth_x().offset, f.W_full.cols());
  GcvObjective gcv(f.W_full, d.Y, {s}, Family::gaussian);
  const double at_selected = gcv({f.smooth_x().lambda});
  EXPECT_NEAR(at_selected, f.gcv_score, 1e-12 * f.gcv_score);
  const LambdaSearch grid;
  for (double l = grid.log10_lo; l <= grid.log10_hi + 1e-9; l += grid.step) {
    EXPECT_LE(at_selected, gcv({std::pow(10.0, l)}) + 1e-15);
  }
}

TEST(Spmr, PureNoiseSelectsHeavySmoothing) {
  int upper = 0;
  const int reps = 100;
  for (int rep = 0; rep < reps; ++rep) {
    DataSet d = gen_dataset(spmr_scenario("null", 500, 0.1, 7), static_cast<std::uint64_t>(rep));
    // outcome unrelated to everything
    d.Y = Stream(99, static_cast<std::uint64_t>(rep), 0).normals(500);
    const SpmrFit f = fit_spmr(d);
    upper += f.smooth_x().lambda > 1.0 ? 1 : 0;
  }
  EXPECT_GE(upper, 90);
}

TEST(Spmr, RecoversSmoothSignal) {
  std::mt19937_64 gen(8);
  const Eigen::Index n = 2000;
  DataSet d;
  d.Z = nlmr::testing::random_normal(n, 1, gen);
  d.C = nlmr::testing::random_normal(n, 1, gen);
  d.X = (0.5 * d.Z.col(0) + d.C.col(0) + nlmr::testing::random_vec(n, gen)).eval();
  d.Y = (d.X.array().sin() + 0.2 * d.C.col(0).array()).matrix() + 0.05 * nlmr::testing::random_vec(n, gen);
  const SpmrFit f = fit_spmr(d);
  const Vec grid = sorted(d.X);
  const CausalCurve c = causal_curve(f, grid);
  const Vec truth = centered(grid.array().sin().matrix());
  const double rmse = std::sqrt((c.f_hat - truth).squaredNorm() / static_cast<double>(n));
  EXPECT_LT(rmse, 0.05);
  EXPECT_GT(f.edf_x, 3.0);
}

TEST(Spmr, TooFewDistinctExposures) {
  DataSet d = gen_dataset(spmr_scenario("sin", 500, 0.1, 9), 0);
  for (Eigen::Index i = 0; i < d.X.size(); ++i) d.X(i) = std::round(d.X(i)) > 10.0 ? 11.0 : 10.0;
  EXPECT_EQ(kind_of([&] { fit_spmr(d); }), ErrorKind::TooFewDistinctExposures);
}

TEST(Spmr, RequiresEnoughObservations) {
  const DataSet d = gen_dataset(spmr_scenario("sin", 50, 0.1, 10), 0);
  EXPECT_EQ(kind_of([&] { fit_spmr(d); }), ErrorKind::InvalidArgument);
}

TEST(Spmr, FamilyMismatch) {
  const DataSet d = gen_dataset(spmr_scenario("sin", 500, 0.1, 11), 0);
  SpmrOptions opt;
  opt.family = Family::binomial;
  EXPECT_EQ(kind_of([&] { fit_spmr(d, opt); }), ErrorKind::InvalidArgument);
}

TEST(Spmr, SmoothTestSeparatesSignalFromNull) {
  const SpmrFit signal = fit_spmr(gen_dataset(spmr_scenario("quad3", 5000, 0.1, 12), 0));
  const TestResult ts = spmr_test(signal);
  EXPECT_LT(ts.p_value, 1e-6);
  EXPECT_EQ(ts.eval_points, 500);
  EXPECT_NEAR(ts.rank_r, signal.edf_x, 0.0);

  const SpmrFit null = fit_spmr(gen_dataset(spmr_scenario("null", 1000, 0.1, 13), 0));
  const TestResult tn = spmr_test(null);
  EXPECT_GE(tn.p_value, 0.0);
  EXPECT_LE(tn.p_value, 1.0);
  EXPECT_EQ(tn.eval_points, 500);
}

TEST(Spmr, EvalPointsAreOrderStatistics) {
  const SpmrFit f = fit_spmr(gen_dataset(spmr_scenario("sin", 2000, 0.1, 14), 0));
  const Vec pts = spmr_eval_points(f);
  ASSERT_EQ(pts.size(), 500);
  EXPECT_EQ(pts(0), f.x_train.minCoeff());
  EXPECT_EQ(pts(499), f.x_train.maxCoeff());
  for (Eigen::Index i = 1; i < pts.size(); ++i) EXPECT_LE(pts(i - 1), pts(i));
}

TEST(Spmr, SmoothCovariatesAndDeltaAddPenalizedBlocks) {
  const DataSet d = gen_dataset(spmr_scenario("sin", 1500, 0.1, 15), 0);
  SpmrOptions opt;
  opt.smooth_covariates = true;
  opt.smooth_delta = true;
  const SpmrFit f = fit_spmr(d, opt);
  ASSERT_EQ(f.smooths.size(), 3u);
  EXPECT_FALSE(f.delta_index.has_value());
  EXPECT_EQ(f.W_full.cols(), 1 + 3 * (opt.basis.num_basis - 1));
  EXPECT_TRUE(f.V_B.cov.allFinite());
  EXPECT_GT(f.v_theta().diagonal().minCoeff(), 0.0);
}

TEST(Spmr, BinomialFit) {
  Scenario sc = spmr_scenario("sin", 3000, 0.1, 16);
  sc.outcome_family = Family::binomial;
  const DataSet d = gen_dataset(sc, 0);
  SpmrOptions opt;
  opt.family = Family::binomial;
  const SpmrFit f = fit_spmr(d, opt);
  EXPECT_EQ(f.V_B.method, CovMethod::bayesian);
  EXPECT_GE(f.edf_x, 1.0);
  EXPECT_LE(f.edf_x, opt.basis.num_basis - 1.0);
  EXPECT_TRUE(std::isfinite(f.gcv_score));
  const CausalCurve c = causal_curve(f, sorted(d.X));
  const Vec truth = centered(c.grid.array().sin().matrix());
  EXPECT_GT(nlmr::testing::correlation(c.f_hat, truth), 0.8);
}
