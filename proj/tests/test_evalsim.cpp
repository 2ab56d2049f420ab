#include "ppfactor/evalsim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace ppf;

namespace {

Eigen::VectorXd sampled(const EvalGrid& g, double (*f)(double)) {
  Eigen::VectorXd v(g.size());
  for (int i = 0; i < g.size(); ++i) v(i) = f(g.t(i));
  return v;
}

double sine(double t) { return std::numbers::sqrt2 * std::sin(std::numbers::pi * t); }

// Tensor trapezoid on explicit surfaces.
double surface_distance2(const Eigen::VectorXd& f, const Eigen::VectorXd& g, const EvalGrid& grid) {
  double sum = 0.0;
  for (int s = 0; s < grid.size(); ++s)
    for (int t = 0; t < grid.size(); ++t) {
      const double diff = f(s) * f(t) - g(s) * g(t);
      sum += grid.w(s) * grid.w(t) * diff * diff;
    }
  return sum;
}

}  // namespace

TEST(EvalGrid, TrapezoidWeights) {
  const EvalGrid g = EvalGrid::uniform(1000);
  EXPECT_NEAR(g.w.sum(), 1.0, 1e-14);
  EXPECT_NEAR(g.w.dot(sampled(g, sine).cwiseAbs2()), 1.0, 1e-6);
  EXPECT_THROW(EvalGrid::uniform(1), std::invalid_argument);
}

TEST(MuError, ShiftAndDecomposition) {
  const EvalGrid g = EvalGrid::uniform(500);
  const Eigen::VectorXd truth = sampled(g, sine);
  Eigen::MatrixXd shifted(g.size(), 3);
  for (int k = 0; k < 3; ++k) shifted.col(k) = truth.array() + 0.2;
  const ErrorStats s = mu_error_stats(shifted, truth, g);
  EXPECT_NEAR(s.bias, 0.2, 1e-12);
  EXPECT_NEAR(s.std, 0.0, 1e-12);
  EXPECT_NEAR(s.rmse, 0.2, 1e-12);

  std::mt19937 gen(1);
  std::normal_distribution<double> z(0.0, 0.1);
  Eigen::MatrixXd noisy(g.size(), 20);
  for (int k = 0; k < 20; ++k) noisy.col(k) = truth.array() + z(gen) + z(gen) * g.t.array();
  const ErrorStats r = mu_error_stats(noisy, truth, g);
  EXPECT_NEAR(r.rmse * r.rmse, r.bias * r.bias + r.std * r.std, 1e-12);
  EXPECT_THROW(mu_error_stats(noisy.topRows(10), truth, g), std::invalid_argument);
}

TEST(PhiError, MatchesExplicitSurfaces) {
  const EvalGrid g = EvalGrid::uniform(120);
  const Eigen::VectorXd truth = sampled(g, sine);
  std::mt19937 gen(2);
  std::normal_distribution<double> z(0.0, 0.2);
  Eigen::MatrixXd est(g.size(), 4);
  for (int k = 0; k < 4; ++k) est.col(k) = truth.array() * (1.0 + z(gen)) + z(gen) * g.t.array();
  const ErrorStats s = phi_outer_error_stats(est, truth, g);

  double rmse2 = 0.0, std2 = 0.0, bias2 = 0.0;
  const int G = g.size();
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(G, G);
  for (int k = 0; k < 4; ++k) {
    rmse2 += surface_distance2(est.col(k), truth, g) / 4.0;
    mean += est.col(k) * est.col(k).transpose() / 4.0;
  }
  for (int a = 0; a < G; ++a)
    for (int b = 0; b < G; ++b) {
      const double w = g.w(a) * g.w(b);
      bias2 += w * std::pow(mean(a, b) - truth(a) * truth(b), 2);
      for (int k = 0; k < 4; ++k) std2 += w * std::pow(est(a, k) * est(b, k) - mean(a, b), 2) / 4.0;
    }
  EXPECT_NEAR(s.rmse, std::sqrt(rmse2), 1e-10);
  EXPECT_NEAR(s.bias, std::sqrt(bias2), 1e-10);
  EXPECT_NEAR(s.std, std::sqrt(std2), 1e-10);
}

TEST(PhiError, SignInvariant) {
  const EvalGrid g = EvalGrid::uniform(300);
  const Eigen::VectorXd truth = sampled(g, sine);
  Eigen::MatrixXd est(g.size(), 2);
  est.col(0) = truth * 1.1;
  est.col(1) = -truth * 1.1;
  const ErrorStats s = phi_outer_error_stats(est, truth, g);
  EXPECT_NEAR(s.std, 0.0, 1e-7);
  EXPECT_NEAR(s.rmse, 0.21, 1e-6);  // ||1.21 phi phi - phi phi|| = .21
}

TEST(ScoreErrors, ExactAndFlipped) {
  const EvalGrid g = EvalGrid::uniform(400);
  Eigen::MatrixXd phi(g.size(), 1);
  phi.col(0) = sampled(g, sine);
  Eigen::MatrixXd u(5, 1);
  u << 0.1, -0.2, 0.3, 0.0, 0.5;
  const ScoreErrorSample same = score_errors(u, phi, u, phi, g);
  EXPECT_NEAR(same.eae(0), 0.0, 1e-7);
  EXPECT_NEAR(same.eac(0), 1.0, 1e-12);
  const ScoreErrorSample flipped = score_errors(-u, -phi, u, phi, g);
  EXPECT_NEAR(flipped.eae(0), 0.0, 1e-7);
  const ScoreErrorSample scaled = score_errors(2.0 * u, phi, u, phi, g);
  EXPECT_NEAR(scaled.eae(0), u.cwiseAbs().mean(), 1e-6);
  const ScoreErrorSample constant = score_errors(Eigen::MatrixXd::Ones(5, 1), phi, u, phi, g);
  EXPECT_TRUE(std::isnan(constant.eac(0)));
  const ScoreErrorStats stats = score_error_stats({same, constant});
  EXPECT_EQ(stats.eac_skipped[0], 1);
  EXPECT_NEAR(stats.eac(0), 1.0, 1e-12);
  EXPECT_EQ(stats.warnings.size(), 1u);
}

TEST(MatchComponents, FindsPermutation) {
  std::mt19937 gen(3);
  std::normal_distribution<double> z;
  Eigen::MatrixXd truth(50, 2);
  for (int i = 0; i < 50; ++i) truth.row(i) << z(gen), z(gen);
  Eigen::MatrixXd fitted(50, 2);
  fitted.col(0) = truth.col(1) + 0.1 * truth.col(0);
  fitted.col(1) = -truth.col(0);
  EXPECT_EQ(match_components(fitted, truth), (std::vector<int>{1, 0}));
  EXPECT_EQ(match_components(truth, truth), (std::vector<int>{0, 1}));
  EXPECT_THROW(match_components(fitted.leftCols(1), truth), std::invalid_argument);
}

TEST(MonteCarlo, SmokeAndDeterminism) {
  MCConfig cfg;
  cfg.scenarios = {1};
  cfg.ns = {20};
  cfg.rates = {30};
  cfg.replicates = 2;
  cfg.grid = 200;
  cfg.threads = 1;
  const CellResult a = run_cell(cfg, 1, 20, 30);
  cfg.threads = 2;
  const CellResult b = run_cell(cfg, 1, 20, 30);
  EXPECT_EQ(a.used + a.failures, 2);
  EXPECT_EQ(a.mu.rmse, b.mu.rmse);
  ASSERT_EQ(a.phi.size(), 2u);
  EXPECT_EQ(a.phi[0].rmse, b.phi[0].rmse);
  EXPECT_TRUE(std::isfinite(a.mu.rmse));

  std::ostringstream err, score, summary;
  write_error_csv(err, {a});
  write_score_csv(score, {a});
  write_cell_summary_csv(summary, {a});
  EXPECT_EQ(err.str().rfind("scenario,n,rate,target,bias,std,rmse\n", 0), 0u);
  EXPECT_NE(err.str().find("1,20,30,phi2,"), std::string::npos);
  EXPECT_EQ(score.str().rfind("scenario,n,rate,component,eae,eac\n", 0), 0u);
  EXPECT_EQ(summary.str().rfind("scenario,n,rate,used,failures,nonconverged,swapped\n", 0), 0u);
}

TEST(MonteCarlo, ConfigValidation) {
  MCConfig cfg;
  cfg.replicates = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.replicates = 10;
  cfg.scenarios = {4};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
