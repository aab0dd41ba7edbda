#include <gtest/gtest.h>

#include "nlmr/estimators.hpp"
#include "nlmr/simkit.hpp"
#include "support.hpp"

using namespace nlmr;

namespace {

Scenario scenario(const std::string& f, int n, double pve, std::uint64_t seed) {
  Scenario sc;
  sc.causal_f = f;
  sc.n = n;
  sc.pve = pve;
  sc.base_seed = seed;
  return sc;
}

ModelSpec spec_for(const std::string& f, Eigen::Index ncov) {
  ModelSpec s;
  s.f_basis = {transform_by_name(f)};
  s.g_basis = ModelSpec::linear_covariates(ncov);
  return s;
}

}  // namespace

TEST(Identifiability, CountsBasisAgainstInstruments) {
  ModelSpec s;
  s.f_basis = {Transform(), transform_by_name("square")};
  EXPECT_FALSE(check_identifiability_2sp(s, 1, 0).ok);
  EXPECT_TRUE(check_identifiability_2sp(s, 1, 1).ok);
  s.g_basis = ModelSpec::linear_covariates(1);
  const auto id = check_identifiability_2sp(s, 1, 1);
  EXPECT_FALSE(id.ok);
  EXPECT_NE(id.diagnostic.find("3"), std::string::npos);
  EXPECT_TRUE(check_identifiability_2sp(s, 2, 1).ok);
}

TEST(Identifiability, TwoStageRejectsUnderidentifiedFit) {
  const DataSet d = gen_dataset(scenario("quad3", 500, 0.1, 3), 0);
  ModelSpec s = spec_for("quad3", 1);
  s.f_basis.push_back(Transform());
  EXPECT_EQ(nlmr::testing::kind_of([&] { fit_two_stage_prediction(d, s); }), ErrorKind::NotIdentifiable);
}

TEST(Identifiability, DependentFBasisRejected) {
  const DataSet d = gen_dataset(scenario("linear", 300, 0.1, 4), 0);
  ModelSpec s = spec_for("linear", 1);
  s.f_basis.push_back(Transform("twice", [](double x) { return 2.0 * x + 1.0; }));
  EXPECT_EQ(nlmr::testing::kind_of([&] { fit_control_function(d, s); }), ErrorKind::NotIdentifiable);
}

TEST(Stage1, ResidualsOrthogonalToInstrumentsAndCovariates) {
  const DataSet d = gen_dataset(scenario("sin", 2000, 0.1, 5), 0);
  const Stage1Fit s1 = fit_stage1(d);
  EXPECT_NEAR(s1.delta1_hat.mean(), 0.0, 1e-10);
  EXPECT_LT((s1.V.values().transpose() * s1.delta1_hat).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_GT(s1.iv_r2, 0.05);
  EXPECT_LT(s1.iv_r2, 0.15);
  EXPECT_GT(s1.iv_f, 50.0);
}

TEST(TwoStage, EqualsControlFunctionForLinearF) {
  for (std::uint64_t rep = 0; rep < 10; ++rep) {
    const DataSet d = gen_dataset(scenario("linear", 800, 0.05, 6), rep);
    const ModelSpec s = spec_for("linear", 1);
    const FitResult a = fit_two_stage_prediction(d, s);
    const FitResult b = fit_control_function(d, s);
    EXPECT_NEAR(a.theta(), b.theta(), 1e-10);
  }
}

TEST(TwoStage, SecondStageResidualsOrthogonalToDesign) {
  const DataSet d = gen_dataset(scenario("quad3", 1500, 0.1, 7), 0);
  const FitResult f = fit_two_stage_prediction(d, spec_for("quad3", 1));
  EXPECT_EQ(f.method_tag, MethodTag::twostage_pred);
  EXPECT_EQ(f.cov.method, CovMethod::sandwich_2sp);
  EXPECT_LT((f.W.values().transpose() * f.residuals).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_GT(f.theta_se(), 0.0);
}

TEST(ControlFunction, NoiseFreeOutcomeRecoversTheta) {
  std::mt19937_64 gen(8);
  const Eigen::Index n = 400;
  DataSet d;
  d.Z = nlmr::testing::random_normal(n, 1, gen);
  d.C = nlmr::testing::random_normal(n, 1, gen);
  d.X = (1.0 + 0.7 * d.Z.col(0).array() + d.C.col(0).array()).matrix() + nlmr::testing::random_vec(n, gen);
  const Transform f = transform_by_name("quad3");
  d.Y = (1.0 + f.apply(d.X).array() + 0.5 * d.C.col(0).array()).matrix();
  const FitResult cf = fit_control_function(d, spec_for("quad3", 1));
  EXPECT_NEAR(cf.theta(), 1.0, 1e-10);
  EXPECT_NEAR(cf.rho_hat, 0.0, 1e-10);
  const FitResult tsp = fit_two_stage_prediction(d, spec_for("quad3", 1));
  EXPECT_NEAR(tsp.theta(), 1.0, 1e-10);
}

TEST(ControlFunction, SecondStageOrthogonality) {
  const DataSet d = gen_dataset(scenario("sin", 1500, 0.1, 9), 0);
  const FitResult f = fit_control_function(d, spec_for("sin", 1));
  EXPECT_EQ(f.method_tag, MethodTag::control_fn);
  ASSERT_TRUE(f.rho_index.has_value());
  EXPECT_EQ(f.coef_labels()[static_cast<std::size_t>(*f.rho_index)], "h:identity(delta1)");
  EXPECT_LT((f.W.values().transpose() * f.residuals).cwiseAbs().maxCoeff(), 1e-7);
  // confounding enters through delta1 with coefficient 1
  EXPECT_NEAR(f.rho_hat, 1.0, 0.2);
}

TEST(ControlFunction, PleiotropyWithLinearFIsRankDeficient) {
  const DataSet d = gen_dataset(scenario("linear", 500, 0.1, 10), 0);
  ModelSpec s = spec_for("linear", 1);
  s.include_iv_stage2 = true;
  EXPECT_EQ(nlmr::testing::kind_of([&] { fit_control_function(d, s); }), ErrorKind::RankDeficient);
}

TEST(ControlFunction, PleiotropyAdjustedFit) {
  Scenario sc = scenario("quad3", 5000, 0.1, 11);
  sc.pleiotropy = Pleiotropy::uncorrelated;
  const DataSet d = gen_dataset(sc, 0);
  ModelSpec s = spec_for("quad3", 1);
  s.include_iv_stage2 = true;
  const FitResult f = fit_control_function(d, s);
  EXPECT_EQ(f.method_tag, MethodTag::control_fn_pleio);
  EXPECT_NEAR(f.theta(), 1.0, 4.0 * f.theta_se());
  EXPECT_NEAR(f.B_hat(2), 1.0, 0.3);  // direct effect of z
}

TEST(ControlFunction, NonlinearHUsesMEstimation) {
  Scenario sc = scenario("sin", 3000, 0.1, 12);
  sc.h_form = "quad3";
  const DataSet d = gen_dataset(sc, 0);
  ModelSpec s = spec_for("sin", 1);
  s.h_form = transform_by_name("quad3");
  const FitResult f = fit_control_function(d, s);
  EXPECT_EQ(f.method_tag, MethodTag::control_fn_h);
  EXPECT_EQ(f.cov.method, CovMethod::mestim);
  EXPECT_NEAR(f.theta(), 1.0, 4.0 * f.theta_se());
}

TEST(ControlFunction, GaussianFitRejectsBinomialSpec) {
  const DataSet d = gen_dataset(scenario("sin", 200, 0.1, 13), 0);
  ModelSpec s = spec_for("sin", 1);
  s.outcome_family = Family::binomial;
  EXPECT_EQ(nlmr::testing::kind_of([&] { fit_control_function(d, s); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(nlmr::testing::kind_of([&] { fit_two_stage_prediction(d, s); }), ErrorKind::InvalidArgument);
}

TEST(BinaryControlFunction, RecoversThetaOnLogitScale) {
  Scenario sc = scenario("sin", 10000, 0.1, 14);
  sc.outcome_family = Family::binomial;
  const DataSet d = gen_dataset(sc, 0);
  ModelSpec s = spec_for("sin", 1);
  s.outcome_family = Family::binomial;
  const FitResult f = fit(d, s);
  EXPECT_EQ(f.method_tag, MethodTag::control_fn_binary);
  EXPECT_EQ(f.cov.method, CovMethod::mestim_binary);
  EXPECT_NEAR(f.theta(), 1.0, 4.0 * f.theta_se());
  EXPECT_TRUE(f.mu.allFinite());
  EXPECT_GT(f.q_diag.minCoeff(), 0.0);
}

TEST(Fit, DispatchesOnFamily) {
  const DataSet d = gen_dataset(scenario("quad3", 500, 0.1, 15), 0);
  const FitResult f = fit(d, spec_for("quad3", 1));
  EXPECT_EQ(f.method_tag, MethodTag::control_fn);
}
