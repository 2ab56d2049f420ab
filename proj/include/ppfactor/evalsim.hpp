#pragma once

#include "ppfactor/simulate.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace ppf {

/// Equispaced grid on [a, b] with trapezoid weights.
struct EvalGrid {
  Eigen::VectorXd t;
  Eigen::VectorXd w;

  static EvalGrid uniform(int points, double a = 0.0, double b = 1.0);
  int size() const { return static_cast<int>(t.size()); }
};

struct ErrorStats {
  double bias = 0.0;
  double std = 0.0;
  double rmse = 0.0;
};

/// L2 bias, standard deviation and rmse of M estimates (grid x M) of a
/// function. Expectations are Monte Carlo averages.
ErrorStats mu_error_stats(const Eigen::MatrixXd& estimates, const Eigen::VectorXd& truth, const EvalGrid& grid);

/// Same statistics for the surfaces f(s) f(t) against g(s) g(t) under the
/// tensor trapezoid rule. Uses <f f, g g> = <f, g>^2, so no surface is formed.
ErrorStats phi_outer_error_stats(const Eigen::MatrixXd& estimates, const Eigen::VectorXd& truth,
                                 const EvalGrid& grid);

/// Per-replicate score errors for each true component k:
/// eae_k = mean_i ||u_hat_ik phi_hat_k - u_ik phi_k||, eac_k = |corr(u_hat_k, u_k)|.
/// Columns must already be matched. eac_k is NaN for a zero-variance column.
struct ScoreErrorSample {
  Eigen::VectorXd eae;
  Eigen::VectorXd eac;
};

ScoreErrorSample score_errors(const Eigen::MatrixXd& fitted_scores, const Eigen::MatrixXd& fitted_phi,
                              const Eigen::MatrixXd& true_scores, const Eigen::MatrixXd& true_phi,
                              const EvalGrid& grid);

struct ScoreErrorStats {
  Eigen::VectorXd eae;
  Eigen::VectorXd eac;
  std::vector<int> eac_skipped;  // per component, replicates without a defined correlation
  std::vector<std::string> warnings;
};

/// Monte Carlo means of the per-replicate errors.
ScoreErrorStats score_error_stats(const std::vector<ScoreErrorSample>& samples);

/// For each true component k, the fitted column assigned to it. Chooses the
/// permutation maximizing the summed |corr| of scores.
std::vector<int> match_components(const Eigen::MatrixXd& fitted_scores, const Eigen::MatrixXd& true_scores);

struct MCConfig {
  std::vector<int> scenarios{1, 2, 3};
  std::vector<int> ns{50, 100, 200, 400};
  std::vector<int> rates{10, 30};
  int replicates = 200;
  int grid = 1000;
  std::uint64_t seed = 1;
  int threads = 0;
  bool rescale = true;
  double xi1 = 1e-5;
  double xi2 = 1e-5;

  void validate() const;
};

struct CellResult {
  int scenario = 0;
  int n = 0;
  int rate = 0;
  ErrorStats mu;
  std::vector<ErrorStats> phi;  // per true component
  ScoreErrorStats scores;
  int used = 0;
  int failures = 0;
  int nonconverged = 0;
  int swapped = 0;  // replicates whose matched component order differs from the fitted order
  std::vector<std::string> failure_messages;
};

/// M replicates of one (scenario, n, rate) cell: simulate, fit with a cubic
/// basis of dimension 9 and two components, then score against the truth.
/// Deterministic in config.seed regardless of thread count.
CellResult run_cell(const MCConfig& config, int scenario, int n, int rate);

/// All cells in scenario, n, rate order.
std::vector<CellResult> run_study(const MCConfig& config,
                                  const std::function<void(const CellResult&)>& on_cell = {});

/// `scenario,n,rate,target,bias,std,rmse` with targets mu, phi1, phi2.
void write_error_csv(std::ostream& out, const std::vector<CellResult>& cells);

/// `scenario,n,rate,component,eae,eac`.
void write_score_csv(std::ostream& out, const std::vector<CellResult>& cells);

/// `scenario,n,rate,used,failures,nonconverged,swapped`.
void write_cell_summary_csv(std::ostream& out, const std::vector<CellResult>& cells);

}  // namespace ppf
