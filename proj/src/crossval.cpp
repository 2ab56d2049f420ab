#include "ppfactor/error.hpp"
#include "ppfactor/fit.hpp"

#include <cmath>
#include <limits>
#include <set>

namespace ppf {

std::vector<std::pair<double, double>> default_cv_grid() {
  std::vector<std::pair<double, double>> grid;
  for (int e1 = -7; e1 <= -2; ++e1) {
    for (int e2 = -7; e2 <= -2; ++e2) grid.emplace_back(std::pow(10.0, e1), std::pow(10.0, e2));
  }
  return grid;
}

CrossValidationResult cross_validate(const ReplicatedPointData& data, const SplineBasis& basis,
                                     const FitConfig& config,
                                     const std::vector<std::pair<double, double>>& grid) {
  config.validate();
  if (grid.empty()) throw std::invalid_argument("cross-validation grid is empty");
  const int n = data.n();
  const int k = config.cv_folds;
  if (n < k) throw std::invalid_argument("fewer replications than folds");
  if (data.total() == 0) throw InsufficientDataError("unit '" + data.unit + "' has no events");

  CrossValidationResult result;

  // fold[i] = i mod k, then fold a zero-event fold into its successor.
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) fold[i] = i % k;
  for (;;) {
    std::vector<std::size_t> events(static_cast<std::size_t>(k), 0);
    std::set<int> present;
    for (int i = 0; i < n; ++i) {
      events[fold[i]] += data.count(i);
      present.insert(fold[i]);
    }
    int empty = -1;
    for (int f : present) {
      if (events[f] == 0) {
        empty = f;
        break;
      }
    }
    if (empty < 0) break;
    auto it = present.upper_bound(empty);
    const int target = it != present.end() ? *it : *present.begin();
    if (target == empty) break;
    for (int& f : fold) {
      if (f == empty) f = target;
    }
    result.warnings.push_back("fold " + std::to_string(empty) + " has no events; merged into fold " +
                              std::to_string(target));
  }
  const std::set<int> folds(fold.begin(), fold.end());
  if (folds.size() < 2) throw std::invalid_argument("fewer than two usable cross-validation folds");

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [xi1, xi2] : grid) {
    FitConfig cfg = config;
    cfg.xi1 = xi1;
    cfg.xi2 = xi2;
    double cv = 0.0;
    for (int f : folds) {
      ReplicatedPointData train;
      train.unit = data.unit;
      train.a = data.a;
      train.b = data.b;
      for (int i = 0; i < n; ++i) {
        if (fold[i] != f) train.days.push_back(data.days[static_cast<std::size_t>(i)]);
      }
      const FitResult fitted = fit_station(train, basis, cfg);
      for (int i = 0; i < n; ++i) {
        if (fold[i] != f) continue;
        const auto& times = data.days[static_cast<std::size_t>(i)];
        const Eigen::VectorXd u = estimate_day_scores(fitted.model, times, cfg.score_tol, cfg.score_bound);
        cv += day_log_density(fitted.model, times, u);
      }
    }
    result.table.push_back({xi1, xi2, cv});
    if (cv > best) {
      best = cv;
      result.best_xi1 = xi1;
      result.best_xi2 = xi2;
    }
  }
  return result;
}

}  // namespace ppf
