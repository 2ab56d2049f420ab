#include "ppfactor/correlate.hpp"
#include "ppfactor/error.hpp"
#include "ppfactor/simulate.hpp"
#include "ppfactor/splines.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ppf;

namespace {

Eigen::MatrixXd gaussian(int n, int p, std::mt19937& gen) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(n, p);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < p; ++k) m(i, k) = z(gen);
  return m;
}

// Upper chi-square tail by the regularized lower gamma series.
double chi2_tail_series(double x, double nu) {
  const double a = nu / 2.0, z = x / 2.0;
  double term = 1.0 / a, sum = term;
  for (int k = 1; k < 10000; ++k) {
    term *= z / (a + k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return 1.0 - std::exp(a * std::log(z) - z - std::lgamma(a)) * sum;
}

CorrelationEntry entry(std::size_t j, std::size_t k, double p, double rho = 0.5) {
  CorrelationEntry e;
  e.j = j;
  e.j_prime = k;
  e.p_value = p;
  e.rho = rho;
  return e;
}

}  // namespace

TEST(ScoreCov, MatchesDoubleLoop) {
  std::mt19937 gen(1);
  const Eigen::MatrixXd a = gaussian(5, 2, gen), b = gaussian(5, 3, gen);
  const ScoreCov s = score_cov(a, b);
  const Eigen::RowVectorXd ma = a.colwise().mean(), mb = b.colwise().mean();
  for (int x = 0; x < 2; ++x) {
    for (int y = 0; y < 3; ++y) {
      double sum = 0.0;
      for (int i = 0; i < 5; ++i) sum += (a(i, x) - ma(x)) * (b(i, y) - mb(y));
      EXPECT_NEAR(s.s12(x, y), sum / 5.0, 1e-12);
    }
  }
  EXPECT_TRUE(score_cov(a, a).s12.isApprox(s.s11));
  const ScoreCov flat = score_cov(Eigen::MatrixXd::Constant(5, 2, 3.0), b);
  EXPECT_EQ(flat.s11.norm(), 0.0);
  EXPECT_EQ(flat.s12.norm(), 0.0);
  EXPECT_THROW(score_cov(a, gaussian(6, 2, gen)), std::invalid_argument);
}

TEST(CanonicalCorr, PearsonForOneComponent) {
  std::mt19937 gen(2);
  const Eigen::MatrixXd a = gaussian(50, 1, gen);
  const Eigen::MatrixXd b = 0.6 * a + gaussian(50, 1, gen);
  const Eigen::VectorXd ac = a.col(0).array() - a.mean(), bc = b.col(0).array() - b.mean();
  const double pearson = ac.dot(bc) / (ac.norm() * bc.norm());
  EXPECT_NEAR(canonical_corr(score_cov(a, b)).rho, std::abs(pearson), 1e-10);
}

TEST(CanonicalCorr, InvariantUnderInvertibleMaps) {
  std::mt19937 gen(3);
  const Eigen::MatrixXd a = gaussian(80, 2, gen);
  const Eigen::MatrixXd b = a * Eigen::Matrix2d{{0.3, 0.0}, {0.2, 0.1}} + gaussian(80, 2, gen);
  const double rho = canonical_corr(score_cov(a, b)).rho;
  const Eigen::Matrix2d A{{2.0, 1.0}, {-0.5, 3.0}};
  EXPECT_NEAR(canonical_corr(score_cov(a * A, b)).rho, rho, 1e-8);
  EXPECT_NEAR(canonical_corr(score_cov(a, b * A)).rho, rho, 1e-8);
  EXPECT_NEAR(canonical_corr(score_cov(a, a * A)).rho, 1.0, 1e-8);
}

TEST(CanonicalCorr, BothSidesAgree) {
  std::mt19937 gen(4);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd a = gaussian(40, 2, gen);
    const Eigen::MatrixXd b = a.leftCols(1) * 0.5 * Eigen::RowVector3d::Ones() + gaussian(40, 3, gen);
    const ScoreCov s = score_cov(a, b);
    const auto left = canonical_corr(s), right = canonical_corr_reverse(s);
    EXPECT_NEAR(left.rho, right.rho, 1e-9);
    ASSERT_EQ(left.r2.size(), 2);
    EXPECT_NEAR(left.r2(1), right.r2(1), 1e-9);
  }
}

TEST(CanonicalCorr, DegenerateCovariance) {
  std::mt19937 gen(5);
  EXPECT_THROW(canonical_corr(score_cov(Eigen::MatrixXd::Zero(10, 2), gaussian(10, 2, gen))),
               DegenerateCovarianceError);
}

TEST(CanonicalCorr, FunctionalFormMatchesScores) {
  // Curves f_i = sum_k u_ik phi_k for two units with non-orthogonal spline
  // components; the functional problem over the component span, discretized
  // on a 2000-point grid, reduces to CCA of the scores.
  std::mt19937 gen(6);
  const SplineBasis basis = make_basis(0.0, 1.0, 5, 4);
  const int n = 60, G = 2000;
  const Eigen::MatrixXd u1 = gaussian(n, 2, gen);
  const Eigen::MatrixXd u2 = u1 * Eigen::Matrix2d{{0.7, 0.1}, {0.0, 0.4}} + gaussian(n, 2, gen);
  const Eigen::MatrixXd c1 = gaussian(basis.dimension(), 2, gen), c2 = gaussian(basis.dimension(), 2, gen);
  Eigen::MatrixXd B(G, basis.dimension());
  Eigen::VectorXd w = Eigen::VectorXd::Constant(G, 1.0 / (G - 1));
  w(0) = w(G - 1) = 0.5 / (G - 1);
  for (int g = 0; g < G; ++g) B.row(g) = basis.eval(static_cast<double>(g) / (G - 1)).transpose();
  const Eigen::MatrixXd phi1 = B * c1, phi2 = B * c2;                         // G x 2
  const Eigen::MatrixXd curves1 = u1 * phi1.transpose(), curves2 = u2 * phi2.transpose();  // n x G
  // Coordinates of each curve against the spanning functions.
  const Eigen::MatrixXd x1 = curves1 * w.asDiagonal() * phi1, x2 = curves2 * w.asDiagonal() * phi2;
  EXPECT_NEAR(canonical_corr(score_cov(x1, x2)).rho, canonical_corr(score_cov(u1, u2)).rho, 1e-6);
}

TEST(Wilks, KnownValue) {
  const WilksResult r = wilks_test(Eigen::VectorXd::Constant(1, 0.5), 100, 1, 1);
  EXPECT_NEAR(r.q, -97.5 * std::log(0.5), 1e-10);
  EXPECT_NEAR(r.q, 67.58, 5e-3);
  EXPECT_EQ(r.nu, 1);
  EXPECT_NEAR(r.p_value, chi2_tail_series(r.q, 1.0), 1e-12);
}

TEST(Wilks, ChiSquareTailAgainstSeries) {
  for (double nu : {1.0, 2.0, 4.0, 6.0}) {
    for (double x : {0.1, 1.0, 3.0, 7.5, 15.0}) EXPECT_NEAR(chi2_upper_tail(x, nu), chi2_tail_series(x, nu), 1e-10);
  }
  EXPECT_EQ(chi2_upper_tail(0.0, 2.0), 1.0);
}

TEST(Wilks, EdgeCases) {
  const WilksResult zero = wilks_test(Eigen::VectorXd::Zero(2), 50, 2, 2);
  EXPECT_EQ(zero.q, 0.0);
  EXPECT_EQ(zero.p_value, 1.0);
  EXPECT_EQ(zero.nu, 4);
  const WilksResult perfect = wilks_test(Eigen::VectorXd::Ones(1), 50, 1, 3);
  EXPECT_EQ(perfect.p_value, 0.0);
  EXPECT_EQ(perfect.q, std::numeric_limits<double>::max());
  EXPECT_EQ(perfect.nu, 3);
  EXPECT_THROW(wilks_test(Eigen::VectorXd::Zero(1), 3, 2, 2), std::invalid_argument);
}

TEST(Wilks, NullCalibration) {
  std::mt19937 gen(7);
  int rejections = 0;
  const int sims = 2000;
  for (int s = 0; s < sims; ++s) {
    const auto e = correlate_pair(gaussian(244, 2, gen), gaussian(244, 2, gen), 0, 1);
    if (e.p_value < 0.05) ++rejections;
  }
  const double rate = static_cast<double>(rejections) / sims;
  EXPECT_GE(rate, 0.03);
  EXPECT_LE(rate, 0.07);
}

TEST(BenjaminiHochberg, WorkedExample) {
  std::vector<CorrelationEntry> e{entry(0, 1, 0.04), entry(0, 2, 0.001), entry(1, 2, 0.02)};
  bh_trim(e, 0.05, 3);
  for (const auto& x : e) {
    EXPECT_TRUE(x.significant);
    EXPECT_EQ(x.rho, 0.5);
  }
}

TEST(BenjaminiHochberg, ExtremesAndTrimming) {
  std::vector<CorrelationEntry> zeros{entry(0, 1, 0.0), entry(0, 2, 0.0)};
  bh_trim(zeros, 0.05, 2);
  EXPECT_TRUE(zeros[0].significant && zeros[1].significant);
  std::vector<CorrelationEntry> ones{entry(0, 1, 1.0), entry(0, 2, 1.0)};
  bh_trim(ones, 0.05, 2);
  EXPECT_FALSE(ones[0].significant || ones[1].significant);
  EXPECT_EQ(ones[0].rho, 0.0);
  EXPECT_EQ(ones[0].distance(), 1.0);
  EXPECT_THROW(bh_trim(ones, 0.05, 1), std::invalid_argument);
}

TEST(BenjaminiHochberg, MatchesDefinitionWalk) {
  std::mt19937 gen(8);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<CorrelationEntry> e;
    for (std::size_t k = 0; k < 10; ++k) {
      const double p = unif(gen);
      e.push_back(entry(0, k + 1, p < 0.3 ? p * p * 0.05 : p));
    }
    const std::size_t total = 12;
    auto copy = e;
    bh_trim(copy, 0.1, total);
    std::vector<double> sorted;
    for (const auto& x : e) sorted.push_back(x.p_value);
    std::sort(sorted.begin(), sorted.end());
    double cut = -1.0;
    for (std::size_t k = 1; k <= sorted.size(); ++k) {
      if (sorted[k - 1] <= 0.1 * k / total) cut = sorted[k - 1];
    }
    for (std::size_t k = 0; k < e.size(); ++k) EXPECT_EQ(copy[k].significant, e[k].p_value <= cut);
  }
}

TEST(DistanceMatrix, BuildAndErrors) {
  std::vector<CorrelationEntry> e{entry(0, 1, 0.0, 1.0), entry(0, 2, 0.0, 0.3), entry(1, 2, 0.0, 0.0)};
  const Eigen::MatrixXd d = build_distance_matrix(e, 3);
  EXPECT_EQ(d(0, 1), 0.0);
  EXPECT_NEAR(d(2, 0), 0.7, 1e-15);
  EXPECT_EQ(d(1, 2), 1.0);
  EXPECT_TRUE(d.isApprox(d.transpose(), 1e-12));
  EXPECT_EQ(d.diagonal().norm(), 0.0);
  e.pop_back();
  EXPECT_THROW(build_distance_matrix(e, 3), std::invalid_argument);
  EXPECT_THROW(build_distance_matrix({entry(0, 5, 0.0)}, 3), std::invalid_argument);
}

TEST(CorrelateAll, LexicographicAndThreadIndependent) {
  std::mt19937 gen(9);
  std::vector<Eigen::MatrixXd> scores;
  for (int j = 0; j < 5; ++j) scores.push_back(gaussian(30, 2, gen));
  const auto one = correlate_all(scores, 1), four = correlate_all(scores, 4);
  ASSERT_EQ(one.size(), 10u);
  EXPECT_EQ(one[0].j, 0u);
  EXPECT_EQ(one[0].j_prime, 1u);
  EXPECT_EQ(one[9].j, 3u);
  EXPECT_EQ(one[9].j_prime, 4u);
  for (std::size_t k = 0; k < one.size(); ++k) {
    EXPECT_EQ(one[k].rho, four[k].rho);
    EXPECT_EQ(one[k].p_value, four[k].p_value);
  }
}
