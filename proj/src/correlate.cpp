#include "ppfactor/correlate.hpp"

#include "ppfactor/error.hpp"
#include "ppfactor/parallel.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace ppf {

ScoreCov score_cov(const Eigen::MatrixXd& u1, const Eigen::MatrixXd& u2) {
  if (u1.rows() != u2.rows()) throw std::invalid_argument("score matrices have different day counts");
  if (u1.rows() < 3) throw std::invalid_argument("score covariance needs n >= 3");
  const double n = static_cast<double>(u1.rows());
  const Eigen::MatrixXd c1 = u1.rowwise() - u1.colwise().mean();
  const Eigen::MatrixXd c2 = u2.rowwise() - u2.colwise().mean();
  return ScoreCov{c1.transpose() * c1 / n, c2.transpose() * c2 / n, c1.transpose() * c2 / n};
}

namespace {

// Ridge-guarded inverse square root of a covariance block.
Eigen::MatrixXd guarded_inv_sqrt(Eigen::MatrixXd s) {
  const auto p = s.rows();
  const double trace = s.trace();
  if (!(trace > 0.0)) throw DegenerateCovarianceError("score covariance has zero trace");
  s.diagonal().array() += 1e-10 * trace / static_cast<double>(p);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (!(ev.minCoeff() > 1e-14 * ev.maxCoeff())) {
    throw DegenerateCovarianceError("score covariance singular after ridge guard");
  }
  return eig.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

CanonicalCorrelation solve_side(const Eigen::MatrixXd& saa, const Eigen::MatrixXd& sbb,
                                const Eigen::MatrixXd& sab, Eigen::Index count) {
  const Eigen::MatrixXd a_half = guarded_inv_sqrt(saa);
  const Eigen::MatrixXd b_half = guarded_inv_sqrt(sbb);
  // S_aa^{-1/2} S_ab S_bb^{-1} S_ba S_aa^{-1/2} = K K^T with K = S_aa^{-1/2} S_ab S_bb^{-1/2}.
  const Eigen::MatrixXd K = a_half * sab * b_half;
  const Eigen::MatrixXd M = K * K.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M, Eigen::EigenvaluesOnly);
  Eigen::VectorXd ev = eig.eigenvalues().reverse();
  CanonicalCorrelation out;
  out.r2 = ev.head(count).cwiseMax(0.0).cwiseMin(1.0);
  out.rho = std::sqrt(out.r2.size() > 0 ? out.r2(0) : 0.0);
  return out;
}

}  // namespace

CanonicalCorrelation canonical_corr(const ScoreCov& cov) {
  const auto count = std::min(cov.s11.rows(), cov.s22.rows());
  return solve_side(cov.s11, cov.s22, cov.s12, count);
}

CanonicalCorrelation canonical_corr_reverse(const ScoreCov& cov) {
  const auto count = std::min(cov.s11.rows(), cov.s22.rows());
  return solve_side(cov.s22, cov.s11, cov.s12.transpose(), count);
}

double chi2_upper_tail(double x, double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("chi-square degrees of freedom must be positive");
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * nu, 0.5 * x);
}

WilksResult wilks_test(const Eigen::VectorXd& r2, int n, int p1, int p2) {
  if (p1 < 1 || p2 < 1) throw std::invalid_argument("Wilks test needs p_j, p_j' >= 1");
  const double factor = n - 1 - (p1 + p2 + 1) / 2.0;
  if (!(n > (p1 + p2 + 1) / 2.0 + 1.0)) throw std::invalid_argument("too few replications for Wilks test");
  double log_l = 0.0;
  for (Eigen::Index k = 0; k < r2.size(); ++k) {
    const double v = std::clamp(r2(k), 0.0, 1.0);
    log_l += std::log1p(-v);
  }
  WilksResult out;
  out.nu = p1 * p2;
  if (std::isinf(log_l)) {
    out.q = std::numeric_limits<double>::max();
    out.p_value = 0.0;
    return out;
  }
  out.q = std::max(0.0, -factor * log_l);
  out.p_value = chi2_upper_tail(out.q, out.nu);
  return out;
}

CorrelationEntry correlate_pair(const Eigen::MatrixXd& u1, const Eigen::MatrixXd& u2, std::size_t j,
                                std::size_t j_prime) {
  const CanonicalCorrelation cc = canonical_corr(score_cov(u1, u2));
  CorrelationEntry e;
  e.j = j;
  e.j_prime = j_prime;
  e.rho = cc.rho;
  e.r2 = cc.r2;
  e.wilks_l = (1.0 - cc.r2.array()).prod();
  const WilksResult w =
      wilks_test(cc.r2, static_cast<int>(u1.rows()), static_cast<int>(u1.cols()), static_cast<int>(u2.cols()));
  e.q = w.q;
  e.nu = w.nu;
  e.p_value = w.p_value;
  return e;
}

void bh_trim(std::vector<CorrelationEntry>& entries, double alpha, std::size_t total_tests) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0, 1)");
  if (total_tests < entries.size()) throw std::invalid_argument("total test count below entry count");
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    const auto& a = entries[x];
    const auto& b = entries[y];
    if (a.p_value != b.p_value) return a.p_value < b.p_value;
    if (a.j != b.j) return a.j < b.j;
    return a.j_prime < b.j_prime;
  });
  std::size_t cutoff = 0;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    const double threshold = alpha * static_cast<double>(k) / static_cast<double>(total_tests);
    if (entries[order[k - 1]].p_value <= threshold) cutoff = k;
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& e = entries[order[k]];
    e.significant = k < cutoff;
    if (!e.significant) e.rho = 0.0;
  }
}

Eigen::MatrixXd build_distance_matrix(const std::vector<CorrelationEntry>& entries, std::size_t d) {
  const auto dd = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd dist = Eigen::MatrixXd::Constant(dd, dd, std::numeric_limits<double>::quiet_NaN());
  dist.diagonal().setZero();
  for (const auto& e : entries) {
    if (e.j >= d || e.j_prime >= d || e.j == e.j_prime) throw std::invalid_argument("entry index out of range");
    const double v = e.distance();
    dist(static_cast<Eigen::Index>(e.j), static_cast<Eigen::Index>(e.j_prime)) = v;
    dist(static_cast<Eigen::Index>(e.j_prime), static_cast<Eigen::Index>(e.j)) = v;
  }
  if (dist.hasNaN()) throw std::invalid_argument("distance matrix is missing pairs");
  return dist;
}

std::vector<CorrelationEntry> correlate_all(const std::vector<Eigen::MatrixXd>& scores, int threads) {
  const std::size_t d = scores.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = j + 1; k < d; ++k) pairs.emplace_back(j, k);
  }
  std::vector<CorrelationEntry> out(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t idx) {
    const auto [j, k] = pairs[idx];
    out[idx] = correlate_pair(scores[j], scores[k], j, k);
  });
  return out;
}

}  // namespace ppf
