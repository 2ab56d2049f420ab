#include "ppfactor/evalsim.hpp"

#include "ppfactor/fit.hpp"
#include "ppfactor/parallel.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>

namespace ppf {

EvalGrid EvalGrid::uniform(int points, double a, double b) {
  if (points < 2) throw std::invalid_argument("grid needs at least two points");
  if (!(b > a)) throw std::invalid_argument("grid interval must satisfy a < b");
  EvalGrid g;
  g.t = Eigen::VectorXd::LinSpaced(points, a, b);
  const double h = (b - a) / (points - 1);
  g.w = Eigen::VectorXd::Constant(points, h);
  g.w(0) = g.w(points - 1) = 0.5 * h;
  return g;
}

namespace {

void check_shapes(const Eigen::MatrixXd& estimates, const Eigen::VectorXd& truth, const EvalGrid& grid) {
  if (estimates.rows() != grid.size() || truth.size() != grid.size()) {
    throw std::invalid_argument("estimates, truth and grid have different lengths");
  }
  if (estimates.cols() < 1) throw std::invalid_argument("need at least one estimate");
}

// Statistics from inner products: gram(m, l) = <e_m, e_l>, cross(m) = <e_m, g>,
// self = <g, g>.
ErrorStats from_gram(const Eigen::MatrixXd& gram, const Eigen::VectorXd& cross, double self) {
  const double m = static_cast<double>(cross.size());
  const double mean_sq = gram.diagonal().mean();
  const double mean_norm = gram.sum() / (m * m);
  const double rmse2 = mean_sq - 2.0 * cross.mean() + self;
  const double bias2 = mean_norm - 2.0 * cross.mean() + self;
  const double std2 = mean_sq - mean_norm;
  return ErrorStats{std::sqrt(std::max(0.0, bias2)), std::sqrt(std::max(0.0, std2)),
                    std::sqrt(std::max(0.0, rmse2))};
}

double corr(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::ArrayXd a = x.array() - x.mean();
  const Eigen::ArrayXd b = y.array() - y.mean();
  const double den = std::sqrt((a * a).sum() * (b * b).sum());
  if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return (a * b).sum() / den;
}

}  // namespace

ErrorStats mu_error_stats(const Eigen::MatrixXd& estimates, const Eigen::VectorXd& truth, const EvalGrid& grid) {
  check_shapes(estimates, truth, grid);
  const double m = static_cast<double>(estimates.cols());
  const Eigen::VectorXd mean = estimates.rowwise().mean();
  const auto norm2 = [&](const Eigen::VectorXd& v) { return grid.w.dot(v.cwiseAbs2()); };
  double std2 = 0.0, rmse2 = 0.0;
  for (Eigen::Index k = 0; k < estimates.cols(); ++k) {
    std2 += norm2(estimates.col(k) - mean);
    rmse2 += norm2(estimates.col(k) - truth);
  }
  return ErrorStats{std::sqrt(norm2(mean - truth)), std::sqrt(std2 / m), std::sqrt(rmse2 / m)};
}

ErrorStats phi_outer_error_stats(const Eigen::MatrixXd& estimates, const Eigen::VectorXd& truth,
                                 const EvalGrid& grid) {
  check_shapes(estimates, truth, grid);
  const Eigen::MatrixXd weighted = grid.w.asDiagonal() * estimates;
  const Eigen::MatrixXd gram = (estimates.transpose() * weighted).array().square().matrix();
  const Eigen::VectorXd cross = (weighted.transpose() * truth).array().square().matrix();
  const double self = std::pow(grid.w.dot(truth.cwiseAbs2()), 2);
  return from_gram(gram, cross, self);
}

ScoreErrorSample score_errors(const Eigen::MatrixXd& fitted_scores, const Eigen::MatrixXd& fitted_phi,
                              const Eigen::MatrixXd& true_scores, const Eigen::MatrixXd& true_phi,
                              const EvalGrid& grid) {
  const Eigen::Index n = true_scores.rows();
  const Eigen::Index p = true_scores.cols();
  if (fitted_scores.rows() != n || fitted_scores.cols() != p || fitted_phi.cols() != p || true_phi.cols() != p) {
    throw std::invalid_argument("fitted and true scores or components have different shapes");
  }
  if (fitted_phi.rows() != grid.size() || true_phi.rows() != grid.size()) {
    throw std::invalid_argument("component values do not match the grid");
  }
  ScoreErrorSample out{Eigen::VectorXd(p), Eigen::VectorXd(p)};
  for (Eigen::Index k = 0; k < p; ++k) {
    const double ff = grid.w.dot(fitted_phi.col(k).cwiseAbs2());
    const double gg = grid.w.dot(true_phi.col(k).cwiseAbs2());
    const double fg = grid.w.dot(fitted_phi.col(k).cwiseProduct(true_phi.col(k)));
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = fitted_scores(i, k);
      const double b = true_scores(i, k);
      sum += std::sqrt(std::max(0.0, a * a * ff - 2.0 * a * b * fg + b * b * gg));
    }
    out.eae(k) = sum / static_cast<double>(n);
    out.eac(k) = std::abs(corr(fitted_scores.col(k), true_scores.col(k)));
  }
  return out;
}

ScoreErrorStats score_error_stats(const std::vector<ScoreErrorSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("no score error samples");
  const Eigen::Index p = samples.front().eae.size();
  ScoreErrorStats out;
  out.eae = Eigen::VectorXd::Zero(p);
  out.eac = Eigen::VectorXd::Zero(p);
  out.eac_skipped.assign(static_cast<std::size_t>(p), 0);
  std::vector<int> used(static_cast<std::size_t>(p), 0);
  for (const auto& s : samples) {
    if (s.eae.size() != p || s.eac.size() != p) throw std::invalid_argument("score samples differ in size");
    out.eae += s.eae;
    for (Eigen::Index k = 0; k < p; ++k) {
      if (std::isnan(s.eac(k))) {
        ++out.eac_skipped[k];
      } else {
        out.eac(k) += s.eac(k);
        ++used[k];
      }
    }
  }
  out.eae /= static_cast<double>(samples.size());
  for (Eigen::Index k = 0; k < p; ++k) {
    if (out.eac_skipped[k] > 0) {
      out.warnings.push_back("component " + std::to_string(k + 1) + ": " + std::to_string(out.eac_skipped[k]) +
                             " zero-variance score columns skipped in eac");
    }
    out.eac(k) = used[k] > 0 ? out.eac(k) / used[k] : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::vector<int> match_components(const Eigen::MatrixXd& fitted_scores, const Eigen::MatrixXd& true_scores) {
  const auto pf = static_cast<int>(fitted_scores.cols());
  const auto pt = static_cast<int>(true_scores.cols());
  if (fitted_scores.rows() != true_scores.rows()) throw std::invalid_argument("score matrices differ in rows");
  if (pf < pt) throw std::invalid_argument("fewer fitted than true components");
  Eigen::MatrixXd score(pf, pt);
  for (int a = 0; a < pf; ++a) {
    for (int b = 0; b < pt; ++b) {
      const double c = std::abs(corr(fitted_scores.col(a), true_scores.col(b)));
      score(a, b) = std::isnan(c) ? 0.0 : c;
    }
  }
  std::vector<int> perm(static_cast<std::size_t>(pf));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best(perm.begin(), perm.begin() + pt);
  double best_value = -1.0;
  do {
    double v = 0.0;
    for (int b = 0; b < pt; ++b) v += score(perm[b], b);
    if (v > best_value + 1e-15) {
      best_value = v;
      best.assign(perm.begin(), perm.begin() + pt);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

void MCConfig::validate() const {
  if (replicates < 2) throw std::invalid_argument("need at least 2 Monte Carlo replicates");
  if (grid < 100) throw std::invalid_argument("grid needs at least 100 points");
  if (scenarios.empty() || ns.empty() || rates.empty()) throw std::invalid_argument("empty study design");
  for (int s : scenarios) scenario_from_int(s);
  for (int n : ns) {
    if (n < 4) throw std::invalid_argument("replication count must be >= 4");
  }
  for (int r : rates) {
    if (r <= 0) throw std::invalid_argument("rates must be positive");
  }
  if (!(xi1 >= 0.0) || !(xi2 >= 0.0)) throw std::invalid_argument("smoothing weights must be nonnegative");
}

namespace {

constexpr int kTrueComponents = 2;

struct ReplicateOutcome {
  bool ok = false;
  bool converged = false;
  bool swapped = false;
  std::string error;
  Eigen::VectorXd mu;
  Eigen::MatrixXd phi;
  ScoreErrorSample scores;
};

}  // namespace

CellResult run_cell(const MCConfig& config, int scenario, int n, int rate) {
  config.validate();
  const Scenario sc = scenario_from_int(scenario);
  const SplineBasis basis = make_basis(0.0, 1.0, 5, 4);
  const EvalGrid grid = EvalGrid::uniform(config.grid);
  const std::vector<double> nodes(grid.t.data(), grid.t.data() + grid.size());
  const Eigen::MatrixXd design = basis.design(nodes);

  FitConfig fc;
  fc.components = kTrueComponents;
  fc.xi1 = config.xi1;
  fc.xi2 = config.xi2;
  fc.rescale = config.rescale;

  const ScenarioSpec probe = ScenarioSpec::for_rate(sc, n, rate, 0);
  Eigen::VectorXd mu_true(grid.size());
  Eigen::MatrixXd phi_true(grid.size(), kTrueComponents);
  for (int g = 0; g < grid.size(); ++g) {
    mu_true(g) = GroundTruth::mu(grid.t(g), probe.c);
    for (int k = 0; k < kTrueComponents; ++k) phi_true(g, k) = GroundTruth::phi(k, grid.t(g));
  }

  const auto M = static_cast<std::size_t>(config.replicates);
  std::vector<ReplicateOutcome> outcomes(M);
  parallel_for(M, resolve_threads(config.threads), [&](std::size_t r) {
    ReplicateOutcome& out = outcomes[r];
    const std::uint64_t seed = make_stream(config.seed, static_cast<std::uint64_t>(n),
                                           static_cast<std::uint64_t>(rate), r)();
    try {
      const ScenarioDraw draw = gen_scenario(ScenarioSpec::for_rate(sc, n, rate, seed));
      const FitResult fit = fit_station(draw.data, basis, fc);
      const std::vector<int> match = match_components(fit.model.U, draw.truth.scores);
      Eigen::MatrixXd u(n, kTrueComponents);
      Eigen::MatrixXd phi(grid.size(), kTrueComponents);
      for (int k = 0; k < kTrueComponents; ++k) {
        u.col(k) = fit.model.U.col(match[k]);
        phi.col(k) = design * fit.model.C.col(match[k]);
        out.swapped = out.swapped || match[k] != k;
      }
      out.mu = design * fit.model.c0;
      out.phi = phi;
      out.scores = score_errors(u, phi, draw.truth.scores, phi_true, grid);
      out.converged = fit.diagnostics.converged;
      out.ok = true;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  });

  CellResult cell;
  cell.scenario = scenario;
  cell.n = n;
  cell.rate = rate;
  std::vector<std::size_t> good;
  for (std::size_t r = 0; r < M; ++r) {
    const auto& o = outcomes[r];
    if (!o.ok) {
      ++cell.failures;
      cell.failure_messages.push_back("replicate " + std::to_string(r) + ": " + o.error);
      continue;
    }
    good.push_back(r);
    if (!o.converged) ++cell.nonconverged;
    if (o.swapped) ++cell.swapped;
  }
  cell.used = static_cast<int>(good.size());
  if (good.empty()) return cell;

  const auto used = static_cast<Eigen::Index>(good.size());
  Eigen::MatrixXd mu(grid.size(), used);
  std::vector<Eigen::MatrixXd> phi(kTrueComponents, Eigen::MatrixXd(grid.size(), used));
  std::vector<ScoreErrorSample> samples;
  for (Eigen::Index j = 0; j < used; ++j) {
    const auto& o = outcomes[good[static_cast<std::size_t>(j)]];
    mu.col(j) = o.mu;
    for (int k = 0; k < kTrueComponents; ++k) phi[k].col(j) = o.phi.col(k);
    samples.push_back(o.scores);
  }
  cell.mu = mu_error_stats(mu, mu_true, grid);
  for (int k = 0; k < kTrueComponents; ++k) {
    cell.phi.push_back(phi_outer_error_stats(phi[k], phi_true.col(k), grid));
  }
  cell.scores = score_error_stats(samples);
  return cell;
}

std::vector<CellResult> run_study(const MCConfig& config, const std::function<void(const CellResult&)>& on_cell) {
  config.validate();
  std::vector<CellResult> cells;
  for (int s : config.scenarios) {
    for (int n : config.ns) {
      for (int r : config.rates) {
        cells.push_back(run_cell(config, s, n, r));
        if (on_cell) on_cell(cells.back());
      }
    }
  }
  return cells;
}

namespace {

void put(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  out << buf;
}

}  // namespace

void write_error_csv(std::ostream& out, const std::vector<CellResult>& cells) {
  out << "scenario,n,rate,target,bias,std,rmse\n";
  for (const auto& c : cells) {
    if (c.used == 0) continue;
    auto row = [&](const std::string& target, const ErrorStats& e) {
      out << c.scenario << ',' << c.n << ',' << c.rate << ',' << target << ',';
      put(out, e.bias);
      out << ',';
      put(out, e.std);
      out << ',';
      put(out, e.rmse);
      out << '\n';
    };
    row("mu", c.mu);
    for (std::size_t k = 0; k < c.phi.size(); ++k) row("phi" + std::to_string(k + 1), c.phi[k]);
  }
}

void write_score_csv(std::ostream& out, const std::vector<CellResult>& cells) {
  out << "scenario,n,rate,component,eae,eac\n";
  for (const auto& c : cells) {
    if (c.used == 0) continue;
    for (Eigen::Index k = 0; k < c.scores.eae.size(); ++k) {
      out << c.scenario << ',' << c.n << ',' << c.rate << ',' << k + 1 << ',';
      put(out, c.scores.eae(k));
      out << ',';
      put(out, c.scores.eac(k));
      out << '\n';
    }
  }
}

void write_cell_summary_csv(std::ostream& out, const std::vector<CellResult>& cells) {
  out << "scenario,n,rate,used,failures,nonconverged,swapped\n";
  for (const auto& c : cells) {
    out << c.scenario << ',' << c.n << ',' << c.rate << ',' << c.used << ',' << c.failures << ','
        << c.nonconverged << ',' << c.swapped << '\n';
  }
}

}  // namespace ppf
