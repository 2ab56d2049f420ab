#pragma once

#include "ppfactor/events.hpp"
#include "ppfactor/splines.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ppf {

struct FitConfig {
  int components = 0;
  double xi1 = 1e-5;
  double xi2 = 1e-5;
  int max_outer_iters = 200;
  double objective_tol = 1e-7;  // relative change between outer iterations
  double score_tol = 1e-8;      // per-day Newton step size
  // Box on each daily score. Days whose events all fall where a component is
  // near zero have no finite score maximizer; the box keeps them finite.
  double score_bound = 5.0;
  int cv_folds = 5;
  double tau_lo = 1e-3;
  double tau_hi = 3.0;
  bool rescale = true;

  void validate() const;
};

/// Fitted multiplicative intensity model of one unit:
///   log lambda_i(t) = beta(t)^T (c0 + C u_i).
///
/// Columns of C are the component coefficient vectors, rows of U the daily
/// scores. Components are J-orthonormal, periodic and ordered by descending
/// score variance.
struct StationModel {
  std::string unit;
  SplineBasis basis;
  Eigen::VectorXd c0;
  Eigen::MatrixXd C;
  Eigen::MatrixXd U;
  Eigen::VectorXd sigma2;
  double tau = 1.0;

  int components() const { return static_cast<int>(C.cols()); }
  int days() const { return static_cast<int>(U.rows()); }

  double mean_log(double t) const;
  double component(int k, double t) const;
  double baseline(double t) const;
  /// Intensity of replication `day` (0-based) at t, in events per unit time.
  double intensity(int day, double t) const;
};

struct FitDiagnostics {
  double objective = 0.0;
  std::vector<double> trace;
  bool converged = false;
  int iterations = 0;
  Eigen::VectorXd day_integrals;
  Eigen::VectorXd sigma2_preliminary;
  std::vector<std::string> warnings;
};

struct FitResult {
  StationModel model;
  FitDiagnostics diagnostics;
};

/// Poisson log-likelihood of all replications, without the 1/m! constants.
double log_likelihood(const StationModel& model, const ReplicatedPointData& data);

/// log-likelihood / n minus the roughness penalties on the mean and components.
double penalized_objective(const StationModel& model, const ReplicatedPointData& data, double xi1,
                           double xi2);

/// Unconstrained gradient of penalized_objective.
struct ObjectiveGradient {
  Eigen::VectorXd c0;
  Eigen::MatrixXd C;
  Eigen::MatrixXd U;
};

ObjectiveGradient objective_gradient(const StationModel& model, const ReplicatedPointData& data,
                                     double xi1, double xi2);

/// Penalized maximum likelihood fit by block-coordinate ascent, each sweep
/// closed by a joint damped Newton step, followed by score rescaling when config.rescale is set.
///
/// Throws InsufficientDataError when every replication is empty and
/// std::invalid_argument when n < components + 2. A fit that hits the
/// iteration cap is returned with diagnostics.converged == false.
FitResult fit_station(const ReplicatedPointData& data, const SplineBasis& basis, const FitConfig& config);

/// Same, started from `start` instead of the histogram initialization. The
/// start is projected onto the constraint set first.
FitResult fit_station(const ReplicatedPointData& data, const SplineBasis& basis, const FitConfig& config,
                      const StationModel& start);

struct TauResult {
  double tau = 1.0;
  bool fallback = false;
  double objective_at_tau = 0.0;
  double objective_at_one = 0.0;
};

/// Count log-likelihood sum_i (-I_i(tau) + m_i log I_i(tau)) for scores tau * U.
double count_log_likelihood(const StationModel& model, const ReplicatedPointData& data, double tau);

/// Golden-section search of tau on (lo, hi]; scales U and sigma2 in place.
TauResult rescale_scores(StationModel& model, const ReplicatedPointData& data, double lo = 1e-3,
                         double hi = 3.0);

/// lambda_i(t) for day in [0, n). Throws DomainError for t outside [a, b].
double reconstruct_intensity(const StationModel& model, int day, double t);

struct ConstraintResiduals {
  double orthonormality = 0.0;  // max |C^T J C - I|
  double periodicity = 0.0;     // max |c_k^T (beta(a) - beta(b))|, k = 0..p
  double centering = 0.0;       // max |mean(U_.k)|
  double decorrelation = 0.0;   // max off-diagonal |U^T U / n|
};

ConstraintResiduals constraint_residuals(const StationModel& model);

/// Best score vector of one replication for fixed c0 and C (unpenalized per-day
/// maximum likelihood over |u_k| <= score_bound, started from zero).
Eigen::VectorXd estimate_day_scores(const StationModel& model, std::span<const double> times,
                                    double score_tol = 1e-8, double score_bound = 5.0);

/// Per-day log density log f(m, t_1..t_m) including the -log m! term.
double day_log_density(const StationModel& model, std::span<const double> times,
                       const Eigen::VectorXd& scores);

struct CrossValidationRow {
  double xi1 = 0.0;
  double xi2 = 0.0;
  double cv = 0.0;
};

struct CrossValidationResult {
  double best_xi1 = 0.0;
  double best_xi2 = 0.0;
  std::vector<CrossValidationRow> table;
  std::vector<std::string> warnings;
};

/// k-fold cross-validation over (xi1, xi2) pairs; day i is held out in fold
/// i mod k. Held-out scores are refit per day against the frozen mean and
/// components.
CrossValidationResult cross_validate(const ReplicatedPointData& data, const SplineBasis& basis,
                                     const FitConfig& config,
                                     const std::vector<std::pair<double, double>>& grid);

/// 6 x 6 logarithmic grid 1e-7 .. 1e-2 in each coordinate.
std::vector<std::pair<double, double>> default_cv_grid();

/// Smallest p whose cumulative variance share reaches `threshold`.
int select_ncomp(std::span<const double> score_variances, double threshold = 0.90);

}  // namespace ppf
