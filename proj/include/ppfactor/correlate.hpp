#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace ppf {

/// Sample (co)variance blocks of two centered score matrices, 1/n normalized.
struct ScoreCov {
  Eigen::MatrixXd s11;  // p_j x p_j
  Eigen::MatrixXd s22;  // p_j' x p_j'
  Eigen::MatrixXd s12;  // p_j x p_j'
};

ScoreCov score_cov(const Eigen::MatrixXd& u1, const Eigen::MatrixXd& u2);

struct CanonicalCorrelation {
  double rho = 0.0;
  Eigen::VectorXd r2;  // min(p_j, p_j') squared canonical correlations, descending
};

/// Largest canonical correlation from S11^{-1/2} S12 S22^{-1} S21 S11^{-1/2}.
/// Throws DegenerateCovarianceError if a diagonal block is singular after the
/// ridge guard.
CanonicalCorrelation canonical_corr(const ScoreCov& cov);

/// Same quantity from the other side, S22^{-1/2} S21 S11^{-1} S12 S22^{-1/2}.
CanonicalCorrelation canonical_corr_reverse(const ScoreCov& cov);

struct WilksResult {
  double q = 0.0;
  int nu = 0;
  double p_value = 1.0;
};

/// Q = -(n - 1 - (p1 + p2 + 1) / 2) log prod(1 - r2), chi-square with p1 * p2
/// degrees of freedom under independence.
WilksResult wilks_test(const Eigen::VectorXd& r2, int n, int p1, int p2);

/// Upper tail P(chi2_nu > x).
double chi2_upper_tail(double x, double nu);

struct CorrelationEntry {
  std::size_t j = 0;
  std::size_t j_prime = 0;
  double rho = 0.0;
  Eigen::VectorXd r2;
  double wilks_l = 1.0;
  double q = 0.0;
  int nu = 0;
  double p_value = 1.0;
  bool significant = false;

  double distance() const { return 1.0 - rho; }
};

/// Canonical correlation and Wilks test for one pair of score matrices.
CorrelationEntry correlate_pair(const Eigen::MatrixXd& u1, const Eigen::MatrixXd& u2, std::size_t j,
                                std::size_t j_prime);

/// Benjamini-Hochberg step-up at level alpha over `total_tests` hypotheses.
/// Flags significant entries and sets rho = 0 for the rest. Ties in p-value
/// are ordered by (j, j').
void bh_trim(std::vector<CorrelationEntry>& entries, double alpha, std::size_t total_tests);

/// d x d matrix of 1 - rho with zero diagonal. Every pair j < j' must be present.
Eigen::MatrixXd build_distance_matrix(const std::vector<CorrelationEntry>& entries, std::size_t d);

/// All pairs j < j' of the given score matrices, in lexicographic order.
std::vector<CorrelationEntry> correlate_all(const std::vector<Eigen::MatrixXd>& scores, int threads = 1);

}  // namespace ppf
