#pragma once

#include "ppfactor/events.hpp"
#include "ppfactor/splines.hpp"

#include <Eigen/Dense>

namespace ppf {

// Quadrature design and per-day sufficient statistics of one unit. The
// likelihood depends on the events only through S (sum of beta over each
// day's event times) and the counts m.
struct Workspace {
  Workspace(const SplineBasis& basis, const ReplicatedPointData& data);

  // q x n matrix of daily coefficient vectors c0 + C u_i.
  Eigen::MatrixXd coefficients(const Eigen::VectorXd& c0, const Eigen::MatrixXd& C,
                               const Eigen::MatrixXd& U) const;

  // Sum over days of -int lambda_i + sum_l log lambda_i(t_il). When `expo`
  // is given it receives exp(B theta) (G x n).
  double log_likelihood(const Eigen::MatrixXd& theta, Eigen::MatrixXd* expo = nullptr) const;

  Eigen::MatrixXd B;  // G x q basis at quadrature nodes
  Eigen::VectorXd w;  // G quadrature weights
  Eigen::MatrixXd S;  // q x n
  Eigen::VectorXd m;  // n
  int n = 0;
};

}  // namespace ppf
