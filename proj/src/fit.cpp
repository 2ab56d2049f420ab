#include "ppfactor/fit.hpp"

#include "ppfactor/error.hpp"
#include "fit_workspace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ppf {

// ---------------------------------------------------------------------------
// Workspace

Workspace::Workspace(const SplineBasis& basis, const ReplicatedPointData& data) {
  if (std::abs(data.a - basis.start()) > 1e-9 || std::abs(data.b - basis.end()) > 1e-9) {
    throw std::invalid_argument("data domain [" + std::to_string(data.a) + ", " + std::to_string(data.b) +
                                "] does not match basis domain");
  }
  const QuadratureRule rule = make_quadrature(basis);
  B = basis.design(rule.nodes);
  w = Eigen::Map<const Eigen::VectorXd>(rule.weights.data(), static_cast<Eigen::Index>(rule.weights.size()));
  n = data.n();
  const int q = basis.dimension();
  S = Eigen::MatrixXd::Zero(q, n);
  m = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (double t : data.days[static_cast<std::size_t>(i)]) S.col(i) += basis.eval(t);
    m(i) = static_cast<double>(data.count(i));
  }
}

Eigen::MatrixXd Workspace::coefficients(const Eigen::VectorXd& c0, const Eigen::MatrixXd& C,
                                        const Eigen::MatrixXd& U) const {
  Eigen::MatrixXd theta = c0.replicate(1, n);
  if (C.cols() > 0 && U.rows() > 0) theta.noalias() += C * U.transpose();
  return theta;
}

double Workspace::log_likelihood(const Eigen::MatrixXd& theta, Eigen::MatrixXd* expo) const {
  Eigen::MatrixXd e = (B * theta).array().exp().matrix();
  const double exposure = (w.transpose() * e).sum();
  const double events = (S.array() * theta.array()).sum();
  if (expo) *expo = std::move(e);
  return events - exposure;
}

// ---------------------------------------------------------------------------
// Model evaluation

double StationModel::mean_log(double t) const { return basis.eval(t).dot(c0); }

double StationModel::component(int k, double t) const { return basis.eval(t).dot(C.col(k)); }

double StationModel::baseline(double t) const { return std::exp(mean_log(t)); }

double StationModel::intensity(int day, double t) const { return reconstruct_intensity(*this, day, t); }

double reconstruct_intensity(const StationModel& model, int day, double t) {
  const Eigen::VectorXd beta = model.basis.eval(t);
  if (model.components() == 0) return std::exp(beta.dot(model.c0));
  if (day < 0 || day >= model.days()) throw std::out_of_range("day index out of range");
  const Eigen::VectorXd theta = model.c0 + model.C * model.U.row(day).transpose();
  return std::exp(beta.dot(theta));
}

namespace {

const Eigen::MatrixXd& scores_for(const StationModel& model, int n, Eigen::MatrixXd& storage) {
  if (model.components() == 0) {
    storage.resize(n, 0);
    return storage;
  }
  if (model.U.rows() != n) throw std::invalid_argument("score matrix rows do not match replication count");
  return model.U;
}

void check_xi(double xi1, double xi2) {
  if (!(xi1 >= 0.0) || !(xi2 >= 0.0)) throw std::invalid_argument("smoothing weights must be nonnegative");
}

double roughness_penalty(const SplineBasis& basis, const Eigen::VectorXd& c0, const Eigen::MatrixXd& C,
                         double xi1, double xi2) {
  if (xi1 == 0.0 && xi2 == 0.0) return 0.0;
  const Eigen::MatrixXd& omega = basis.roughness();
  double pen = xi1 * c0.dot(omega * c0);
  if (C.cols() > 0) pen += xi2 * (C.transpose() * omega * C).trace();
  return pen;
}

}  // namespace

double log_likelihood(const StationModel& model, const ReplicatedPointData& data) {
  Workspace ws(model.basis, data);
  Eigen::MatrixXd storage;
  const Eigen::MatrixXd& U = scores_for(model, ws.n, storage);
  return ws.log_likelihood(ws.coefficients(model.c0, model.C, U));
}

double penalized_objective(const StationModel& model, const ReplicatedPointData& data, double xi1,
                           double xi2) {
  check_xi(xi1, xi2);
  if (data.n() == 0) throw std::invalid_argument("no replications");
  return log_likelihood(model, data) / data.n() - roughness_penalty(model.basis, model.c0, model.C, xi1, xi2);
}

ObjectiveGradient objective_gradient(const StationModel& model, const ReplicatedPointData& data,
                                     double xi1, double xi2) {
  check_xi(xi1, xi2);
  Workspace ws(model.basis, data);
  Eigen::MatrixXd storage;
  const Eigen::MatrixXd& U = scores_for(model, ws.n, storage);
  Eigen::MatrixXd expo;
  ws.log_likelihood(ws.coefficients(model.c0, model.C, U), &expo);
  // Column i: d l_i / d theta_i.
  const Eigen::MatrixXd gtheta = ws.S - ws.B.transpose() * (ws.w.asDiagonal() * expo);
  const double inv_n = 1.0 / ws.n;

  ObjectiveGradient grad;
  grad.c0 = inv_n * gtheta.rowwise().sum();
  grad.C = inv_n * gtheta * U;
  grad.U = inv_n * (model.C.transpose() * gtheta).transpose();
  if (xi1 != 0.0 || xi2 != 0.0) {
    const Eigen::MatrixXd& omega = model.basis.roughness();
    grad.c0 -= 2.0 * xi1 * omega * model.c0;
    if (model.components() > 0) grad.C -= 2.0 * xi2 * omega * model.C;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Per-day score estimation

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 30;
constexpr int kMaxDayNewton = 50;
constexpr double kMaxScoreStep = 5.0;

// Solves (-H) d = g for an ascent direction, shifting the diagonal when -H is
// not numerically positive definite.
Eigen::VectorXd ascent_direction(const Eigen::MatrixXd& neg_hessian, const Eigen::VectorXd& grad) {
  const Eigen::Index k = grad.size();
  double shift = 0.0;
  const double scale = std::max(1e-300, neg_hessian.diagonal().cwiseAbs().maxCoeff());
  for (int attempt = 0; attempt < 40; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(neg_hessian + shift * Eigen::MatrixXd::Identity(k, k));
    if (llt.info() == Eigen::Success) {
      Eigen::VectorXd d = llt.solve(grad);
      if (d.allFinite()) return d;
    }
    shift = shift == 0.0 ? 1e-12 * scale : shift * 10.0;
  }
  return grad / scale;
}

// Maximizes -w^T exp(base + BC u) + sc^T u over the box |u_k| <= bound by
// damped projected Newton.
Eigen::VectorXd newton_day(const Eigen::VectorXd& base, const Eigen::MatrixXd& BC, const Eigen::VectorXd& w,
                           const Eigen::VectorXd& sc, Eigen::VectorXd u, double tol, double bound) {
  auto value = [&](const Eigen::VectorXd& v, Eigen::VectorXd* we) {
    Eigen::VectorXd e = (base + BC * v).array().exp().matrix();
    e.array() *= w.array();
    const double f = sc.dot(v) - e.sum();
    if (we) *we = std::move(e);
    return f;
  };
  Eigen::VectorXd we;
  double f = value(u, &we);
  const Eigen::Index p = u.size();
  for (int iter = 0; iter < kMaxDayNewton; ++iter) {
    const Eigen::VectorXd grad = sc - BC.transpose() * we;
    const Eigen::MatrixXd neg_h = BC.transpose() * we.asDiagonal() * BC;
    // Coordinates held at the bound by an outward gradient stay fixed.
    std::vector<Eigen::Index> free;
    for (Eigen::Index k = 0; k < p; ++k) {
      const bool pinned = (u(k) >= bound && grad(k) > 0.0) || (u(k) <= -bound && grad(k) < 0.0);
      if (!pinned) free.push_back(k);
    }
    if (free.empty()) break;
    Eigen::VectorXd step = Eigen::VectorXd::Zero(p);
    {
      const auto nf = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd h(nf, nf);
      Eigen::VectorXd g(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        g(a) = grad(free[a]);
        for (Eigen::Index b = 0; b < nf; ++b) h(a, b) = neg_h(free[a], free[b]);
      }
      const Eigen::VectorXd d = ascent_direction(h, g);
      for (Eigen::Index a = 0; a < nf; ++a) step(free[a]) = d(a);
    }
    const double big = step.cwiseAbs().maxCoeff();
    if (big > kMaxScoreStep) step *= kMaxScoreStep / big;
    if (!(grad.dot(step) > 0.0)) break;
    double alpha = 1.0;
    bool accepted = false;
    double moved = 0.0;
    Eigen::VectorXd trial_we;
    for (int h = 0; h <= kMaxHalvings; ++h, alpha *= 0.5) {
      const Eigen::VectorXd trial = (u + alpha * step).cwiseMax(-bound).cwiseMin(bound);
      const double slope = grad.dot(trial - u);
      if (!(slope > 0.0)) break;
      const double ft = value(trial, &trial_we);
      if (std::isfinite(ft) && ft >= f + kArmijo * slope) {
        moved = (trial - u).cwiseAbs().maxCoeff();
        u = trial;
        f = ft;
        we = std::move(trial_we);
        accepted = true;
        break;
      }
    }
    if (!accepted || moved < tol) break;
  }
  return u;
}

}  // namespace

Eigen::VectorXd estimate_day_scores(const StationModel& model, std::span<const double> times, double score_tol,
                                    double score_bound) {
  const int p = model.components();
  if (p == 0) return Eigen::VectorXd(0);
  const QuadratureRule rule = make_quadrature(model.basis);
  const Eigen::MatrixXd B = model.basis.design(rule.nodes);
  const Eigen::VectorXd w =
      Eigen::Map<const Eigen::VectorXd>(rule.weights.data(), static_cast<Eigen::Index>(rule.weights.size()));
  Eigen::VectorXd s = Eigen::VectorXd::Zero(model.basis.dimension());
  for (double t : times) s += model.basis.eval(t);
  return newton_day(B * model.c0, B * model.C, w, model.C.transpose() * s, Eigen::VectorXd::Zero(p), score_tol,
                    score_bound);
}

double day_log_density(const StationModel& model, std::span<const double> times, const Eigen::VectorXd& scores) {
  Eigen::VectorXd theta = model.c0;
  if (model.components() > 0) theta += model.C * scores;
  const double exposure = integrate(model.basis, [&](double t) { return std::exp(model.basis.eval(t).dot(theta)); });
  double events = 0.0;
  for (double t : times) events += model.basis.eval(t).dot(theta);
  return events - exposure - std::lgamma(static_cast<double>(times.size()) + 1.0);
}

// ---------------------------------------------------------------------------
// Block-coordinate ascent

namespace {

struct State {
  Eigen::VectorXd c0;
  Eigen::MatrixXd C;
  Eigen::MatrixXd U;
};

class Fitter {
 public:
  Fitter(const ReplicatedPointData& data, const SplineBasis& basis, const FitConfig& config)
      : data_(data), basis_(basis), config_(config), ws_(basis, data), omega_(basis.roughness()), J_(basis.gram()) {
    const int q = basis.dimension();
    // Orthonormal basis of the periodic subspace {c : c^T (beta(a) - beta(b)) = 0}.
    const Eigen::VectorXd d = basis.periodicity_vector();
    if (d.norm() == 0.0) {
      N_ = Eigen::MatrixXd::Identity(q, q);
    } else {
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(d);
      const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(q, q);
      N_ = Q.rightCols(q - 1);
    }
    // C = A W with W^T W = I gives J-orthonormal periodic components.
    L_ = Eigen::LLT<Eigen::MatrixXd>(N_.transpose() * J_ * N_).matrixL();
    A_ = N_ * L_.transpose().triangularView<Eigen::Upper>().solve(
                  Eigen::MatrixXd::Identity(N_.cols(), N_.cols()));
  }

  FitResult run(const StationModel* start = nullptr);

 private:
  double objective(const State& s, Eigen::MatrixXd* expo = nullptr) const {
    const double ll = ws_.log_likelihood(ws_.coefficients(s.c0, s.C, s.U), expo);
    return ll / ws_.n - penalty(s.c0, s.C);
  }
  double penalty(const Eigen::VectorXd& c0, const Eigen::MatrixXd& C) const {
    double pen = config_.xi1 * c0.dot(omega_ * c0);
    if (C.cols() > 0) pen += config_.xi2 * (C.transpose() * omega_ * C).trace();
    return pen;
  }
  Eigen::MatrixXd theta_gradient(const Eigen::MatrixXd& expo) const {
    return ws_.S - ws_.B.transpose() * (ws_.w.asDiagonal() * expo);
  }
  // -sum_g w_g v_g B_g B_g^T, the likelihood Hessian weighted by v.
  Eigen::MatrixXd weighted_hessian(const Eigen::VectorXd& v) const {
    return -(ws_.B.transpose() * (ws_.w.cwiseProduct(v)).asDiagonal() * ws_.B);
  }

  void initialize(State& s) const;
  void warm_start(State& s, const StationModel& start) const;
  double step_mean(State& s, double f) const;
  double step_scores(State& s, double f) const;
  double step_components(State& s, double f) const;
  double step_joint(State& s, double f);
  void canonicalize(State& s) const;
  void normalize(State& s) const;

  const ReplicatedPointData& data_;
  const SplineBasis& basis_;
  FitConfig config_;
  Workspace ws_;
  Eigen::MatrixXd omega_;
  Eigen::MatrixXd J_;
  Eigen::MatrixXd N_;
  Eigen::MatrixXd L_;
  Eigen::MatrixXd A_;
  double damping_ = 1e-3;
};

void Fitter::initialize(State& s) const {
  const int q = basis_.dimension();
  const int p = config_.components;
  const int n = ws_.n;
  const double a = basis_.start();
  const double b = basis_.end();
  const int nb = std::max(2 * q, 10);
  const double width = (b - a) / nb;

  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(nb, n);
  for (int i = 0; i < n; ++i) {
    for (double t : data_.days[static_cast<std::size_t>(i)]) {
      const int bin = std::clamp(static_cast<int>((t - a) / width), 0, nb - 1);
      counts(bin, i) += 1.0;
    }
  }
  std::vector<double> centers(static_cast<std::size_t>(nb));
  for (int k = 0; k < nb; ++k) centers[k] = a + (k + 0.5) * width;
  const Eigen::MatrixXd X = basis_.design(centers) * N_;
  const Eigen::MatrixXd P = N_.transpose() * omega_ * N_;
  const double lambda = nb * std::max(config_.xi1, 1e-6);
  Eigen::MatrixXd normal = X.transpose() * X + lambda * P;
  normal.diagonal().array() += 1e-10;
  const Eigen::LDLT<Eigen::MatrixXd> smoother(normal);

  const Eigen::VectorXd pooled = counts.rowwise().sum();
  const double floor_rate = 0.1 / (b - a);
  Eigen::VectorXd y(nb);
  for (int k = 0; k < nb; ++k) y(k) = std::log(std::max(pooled(k) / (n * width), floor_rate));
  s.c0 = N_ * smoother.solve(X.transpose() * y);

  s.U = Eigen::MatrixXd::Zero(n, p);
  s.C.resize(q, p);
  if (p == 0) return;
  const Eigen::VectorXd mean_counts = pooled / n;
  Eigen::MatrixXd W(N_.cols(), n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd r(nb);
    for (int k = 0; k < nb; ++k) r(k) = std::log((counts(k, i) + 0.5) / (mean_counts(k) + 0.5));
    W.col(i) = L_.transpose() * smoother.solve(X.transpose() * r);
  }
  W.colwise() -= W.rowwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(W * W.transpose() / n);
  const Eigen::MatrixXd top = eig.eigenvectors().rightCols(p).rowwise().reverse();
  s.C = A_ * top;
}

void Fitter::warm_start(State& s, const StationModel& start) const {
  const int q = basis_.dimension();
  const int p = config_.components;
  if (start.c0.size() != q || start.C.rows() != q || start.C.cols() != p || start.U.rows() != ws_.n ||
      start.U.cols() != p) {
    throw std::invalid_argument("starting model does not match basis, components or replication count");
  }
  const Eigen::MatrixXd P = N_ * N_.transpose();
  s.c0 = P * start.c0;
  s.C = P * start.C;
  s.U = start.U;
  if (p == 0) return;
  Eigen::LLT<Eigen::MatrixXd> llt(s.C.transpose() * J_ * s.C);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("starting components are linearly dependent");
  const Eigen::MatrixXd R = llt.matrixU();
  s.C = R.transpose().triangularView<Eigen::Lower>().solve(s.C.transpose()).transpose();
  s.U = s.U * R.transpose();
  canonicalize(s);
}

double Fitter::step_mean(State& s, double f) const {
  Eigen::MatrixXd expo;
  objective(s, &expo);
  const double inv_n = 1.0 / ws_.n;
  const Eigen::MatrixXd gtheta = theta_gradient(expo);
  const Eigen::VectorXd grad_c = inv_n * gtheta.rowwise().sum() - 2.0 * config_.xi1 * omega_ * s.c0;
  const Eigen::MatrixXd neg_h =
      -(inv_n * weighted_hessian(expo.rowwise().sum())) + 2.0 * config_.xi1 * omega_;
  const Eigen::VectorXd gz = N_.transpose() * grad_c;
  const Eigen::VectorXd dz = ascent_direction(N_.transpose() * neg_h * N_, gz);
  const double slope = gz.dot(dz);
  if (!(slope > 0.0)) return f;
  const Eigen::VectorXd dc = N_ * dz;
  double alpha = 1.0;
  State trial = s;
  for (int h = 0; h <= kMaxHalvings; ++h, alpha *= 0.5) {
    trial.c0 = s.c0 + alpha * dc;
    const double ft = objective(trial);
    if (std::isfinite(ft) && ft >= f + kArmijo * alpha * slope) {
      s.c0 = trial.c0;
      return ft;
    }
  }
  return f;
}

double Fitter::step_scores(State& s, double f) const {
  const int n = ws_.n;
  const int p = config_.components;
  const Eigen::MatrixXd BC = ws_.B * s.C;
  const Eigen::VectorXd base_mean = ws_.B * s.c0;
  const Eigen::MatrixXd SC = s.C.transpose() * ws_.S;  // p x n

  Eigen::MatrixXd delta(n, p);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd u0 = s.U.row(i).transpose();
    const Eigen::VectorXd u = newton_day(base_mean, BC, ws_.w, SC.col(i), u0, config_.score_tol, config_.score_bound);
    delta.row(i) = (u - u0).transpose();
  }
  const Eigen::VectorXd dbar = delta.colwise().mean().transpose();

  Eigen::MatrixXd expo;
  objective(s, &expo);
  const Eigen::MatrixXd gtheta = theta_gradient(expo);
  const double slope = (gtheta.cwiseProduct(s.C * delta.transpose())).sum() / n -
                       2.0 * config_.xi1 * s.c0.dot(omega_ * (s.C * dbar));
  if (!(slope > 0.0)) return f;

  // Moving the score mean into c0 keeps the daily coefficients unchanged
  // while restoring centered scores.
  const Eigen::MatrixXd centered = delta.rowwise() - dbar.transpose();
  const Eigen::VectorXd shift = s.C * dbar;
  State trial = s;
  double alpha = 1.0;
  for (int h = 0; h <= kMaxHalvings; ++h, alpha *= 0.5) {
    trial.c0 = s.c0 + alpha * shift;
    trial.U = s.U + alpha * centered;
    const double ft = objective(trial);
    if (std::isfinite(ft) && ft >= f + kArmijo * alpha * slope) {
      s = std::move(trial);
      return ft;
    }
  }
  return f;
}

double Fitter::step_components(State& s, double f) const {
  const int n = ws_.n;
  const int p = config_.components;
  const int r = static_cast<int>(N_.cols());
  const double inv_n = 1.0 / n;

  Eigen::MatrixXd expo;
  objective(s, &expo);
  const Eigen::MatrixXd gtheta = theta_gradient(expo);
  const Eigen::MatrixXd grad_C = inv_n * gtheta * s.U - 2.0 * config_.xi2 * omega_ * s.C;

  Eigen::MatrixXd neg_h = Eigen::MatrixXd::Zero(r * p, r * p);
  for (int k = 0; k < p; ++k) {
    for (int l = k; l < p; ++l) {
      const Eigen::VectorXd v = expo * (s.U.col(k).cwiseProduct(s.U.col(l)));
      Eigen::MatrixXd block = -inv_n * weighted_hessian(v);
      if (k == l) block += 2.0 * config_.xi2 * omega_;
      const Eigen::MatrixXd reduced = N_.transpose() * block * N_;
      neg_h.block(k * r, l * r, r, r) = reduced;
      if (k != l) neg_h.block(l * r, k * r, r, r) = reduced.transpose();
    }
  }
  const Eigen::MatrixXd gz = N_.transpose() * grad_C;
  const Eigen::VectorXd gz_vec = Eigen::Map<const Eigen::VectorXd>(gz.data(), gz.size());
  const Eigen::VectorXd dz_vec = ascent_direction(neg_h, gz_vec);
  const Eigen::MatrixXd delta = N_ * Eigen::Map<const Eigen::MatrixXd>(dz_vec.data(), r, p);

  // Directional derivative of the objective after re-orthonormalization.
  const Eigen::MatrixXd omega_c = omega_ * s.C;
  const Eigen::MatrixXd gdot = delta.transpose() * J_ * s.C + s.C.transpose() * J_ * delta;
  const double lik_slope = inv_n * (delta.cwiseProduct(gtheta * s.U)).sum();
  const double pen_slope = config_.xi2 * (2.0 * (delta.cwiseProduct(omega_c)).sum() -
                                          (s.C.transpose() * omega_c * gdot).trace());
  const double slope = lik_slope - pen_slope;
  if (!(slope > 0.0)) return f;

  State trial = s;
  double alpha = 1.0;
  for (int h = 0; h <= kMaxHalvings; ++h, alpha *= 0.5) {
    const Eigen::MatrixXd moved = s.C + alpha * delta;
    Eigen::LLT<Eigen::MatrixXd> llt(moved.transpose() * J_ * moved);
    if (llt.info() != Eigen::Success) continue;
    const Eigen::MatrixXd R = llt.matrixU();
    trial.C = R.transpose().triangularView<Eigen::Lower>().solve(moved.transpose()).transpose();
    trial.U = s.U * R.transpose();
    const double ft = objective(trial);
    if (std::isfinite(ft) && ft >= f + kArmijo * alpha * slope) {
      s = std::move(trial);
      return ft;
    }
  }
  return f;
}

// Damped Newton step on (c0, C, U) together. The per-day score blocks are
// eliminated by a Schur complement, leaving a system of size r (1 + p).
// Marquardt damping absorbs the directions the likelihood cannot see.
double Fitter::step_joint(State& s, double f) {
  const int n = ws_.n;
  const int p = config_.components;
  const int r = static_cast<int>(N_.cols());
  const int m = r * (1 + p);

  Eigen::MatrixXd expo;
  objective(s, &expo);
  const Eigen::MatrixXd H = N_.transpose() * theta_gradient(expo);  // r x n
  const Eigen::MatrixXd BN = ws_.B * N_;
  const Eigen::MatrixXd Z = N_.transpose() * s.C;
  const Eigen::MatrixXd P = N_.transpose() * omega_ * N_;

  // Everything below is n times the objective's derivatives.
  Eigen::MatrixXd Haa = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd ga = Eigen::VectorXd::Zero(m);
  std::vector<Eigen::MatrixXd> Hau(static_cast<std::size_t>(n));
  std::vector<Eigen::MatrixXd> Huu(static_cast<std::size_t>(n));
  Eigen::MatrixXd gu(p, n);
  Eigen::VectorXd v(1 + p);
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXd G = BN.transpose() * (ws_.w.cwiseProduct(expo.col(i))).asDiagonal() * BN;
    const Eigen::MatrixXd GZ = G * Z;
    v(0) = 1.0;
    v.tail(p) = s.U.row(i).transpose();
    Eigen::MatrixXd& cross = Hau[static_cast<std::size_t>(i)];
    cross.resize(m, p);
    for (int a = 0; a <= p; ++a) {
      ga.segment(a * r, r) += v(a) * H.col(i);
      cross.middleRows(a * r, r) = v(a) * GZ;
      for (int b = a; b <= p; ++b) Haa.block(a * r, b * r, r, r) += (v(a) * v(b)) * G;
    }
    for (int k = 0; k < p; ++k) cross.block((1 + k) * r, k, r, 1) -= H.col(i);
    Huu[static_cast<std::size_t>(i)] = Z.transpose() * GZ;
    gu.col(i) = Z.transpose() * H.col(i);
  }
  for (int a = 0; a <= p; ++a) {
    for (int b = a + 1; b <= p; ++b) Haa.block(b * r, a * r, r, r) = Haa.block(a * r, b * r, r, r).transpose();
  }
  ga.head(r) -= 2.0 * n * config_.xi1 * (P * (N_.transpose() * s.c0));
  Haa.topLeftCorner(r, r) += 2.0 * n * config_.xi1 * P;
  // Normalization moves any step back onto C^T J C = I with centered scores,
  // so the penalties are differentiated as functions of the normalized state:
  // xi1 on c0 + C mean(U), xi2 on tr((C^T J C)^-1 C^T Omega C). s is canonical.
  const Eigen::MatrixXd omega_c = omega_ * s.C;
  const Eigen::MatrixXd pen_C = N_.transpose() * (omega_c - J_ * s.C * (s.C.transpose() * omega_c));
  gu.colwise() -= 2.0 * config_.xi1 * (omega_c.transpose() * s.c0);
  for (int k = 0; k < p; ++k) {
    ga.segment((1 + k) * r, r) -= 2.0 * n * config_.xi2 * pen_C.col(k);
    Haa.block((1 + k) * r, (1 + k) * r, r, r) += 2.0 * n * config_.xi2 * P;
  }
  const double tiny = 1e-12 * std::max(1.0, Haa.diagonal().maxCoeff());

  for (int attempt = 0; attempt < 12; ++attempt, damping_ *= 8.0) {
    Eigen::MatrixXd schur = Haa;
    schur.diagonal() += damping_ * Haa.diagonal() + Eigen::VectorXd::Constant(m, tiny);
    Eigen::VectorXd rhs = ga;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> days(static_cast<std::size_t>(n));
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      Eigen::MatrixXd K = Huu[iu];
      K.diagonal() += damping_ * Huu[iu].diagonal() + Eigen::VectorXd::Constant(p, tiny);
      days[iu].compute(K);
      if (days[iu].info() != Eigen::Success) {
        ok = false;
        break;
      }
      const Eigen::MatrixXd KinvT = days[iu].solve(Hau[iu].transpose());  // p x m
      schur.noalias() -= Hau[iu] * KinvT;
      rhs.noalias() -= KinvT.transpose() * gu.col(i);
    }
    if (!ok) continue;
    const Eigen::LLT<Eigen::MatrixXd> outer(schur);
    if (outer.info() != Eigen::Success) continue;
    const Eigen::VectorXd dx = outer.solve(rhs);
    if (!dx.allFinite()) continue;

    State trial = s;
    trial.c0 += N_ * dx.head(r);
    trial.C += N_ * Eigen::Map<const Eigen::MatrixXd>(dx.data() + r, r, p);
    for (int i = 0; i < n; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      const Eigen::VectorXd du = days[iu].solve(gu.col(i) - Hau[iu].transpose() * dx);
      trial.U.row(i) += du.transpose();
    }
    trial.U = trial.U.cwiseMax(-config_.score_bound).cwiseMin(config_.score_bound);
    if (!trial.U.allFinite()) continue;
    Eigen::LLT<Eigen::MatrixXd> llt(trial.C.transpose() * J_ * trial.C);
    if (llt.info() != Eigen::Success) continue;
    normalize(trial);
    const double ft = objective(trial);
    if (std::isfinite(ft) && ft > f) {
      s = std::move(trial);
      damping_ = std::max(damping_ / 4.0, 1e-9);
      return ft;
    }
  }
  damping_ = 1e-3;
  return f;
}

// Restores C^T J C = I, then the canonical form.
void Fitter::normalize(State& s) const {
  Eigen::LLT<Eigen::MatrixXd> llt(s.C.transpose() * J_ * s.C);
  const Eigen::MatrixXd R = llt.matrixU();
  s.C = R.transpose().triangularView<Eigen::Lower>().solve(s.C.transpose()).transpose();
  s.U = s.U * R.transpose();
  canonicalize(s);
}

void Fitter::canonicalize(State& s) const {
  const int p = config_.components;
  if (p == 0) return;
  const int n = ws_.n;
  const Eigen::RowVectorXd mean = s.U.colwise().mean();
  s.c0 += s.C * mean.transpose();
  s.U.rowwise() -= mean;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.U.transpose() * s.U / n);
  const Eigen::MatrixXd V = eig.eigenvectors().rowwise().reverse();
  s.C = s.C * V;
  s.U = s.U * V;
  for (int k = 0; k < p; ++k) {
    const Eigen::VectorXd jc = J_ * s.C.col(k);
    Eigen::Index idx = 0;
    jc.cwiseAbs().maxCoeff(&idx);
    if (jc(idx) < 0.0) {
      s.C.col(k) *= -1.0;
      s.U.col(k) *= -1.0;
    }
  }
}

FitResult Fitter::run(const StationModel* start) {
  const ReplicatedPointData& data = data_;
  State s;
  if (start) {
    warm_start(s, *start);
  } else {
    initialize(s);
  }
  FitResult result{StationModel{data.unit, basis_, {}, {}, {}, {}, 1.0}, {}};
  FitDiagnostics& diag = result.diagnostics;

  double f = objective(s);
  diag.trace.push_back(f);
  const int p = config_.components;
  for (int it = 1; it <= config_.max_outer_iters; ++it) {
    double fn = step_mean(s, f);
    if (p > 0) {
      fn = step_scores(s, fn);
      fn = step_components(s, fn);
      canonicalize(s);
      fn = step_joint(s, objective(s));
    }
    diag.trace.push_back(fn);
    diag.iterations = it;
    const bool small = std::abs(fn - f) <= config_.objective_tol * std::max(1.0, std::abs(f));
    f = fn;
    if (small) {
      diag.converged = true;
      break;
    }
  }
  if (!std::isfinite(f)) diag.converged = false;
  diag.objective = f;
  if (!diag.converged) diag.warnings.push_back("iteration cap reached before convergence");

  StationModel& model = result.model;
  model.c0 = s.c0;
  model.C = s.C;
  model.U = s.U;
  model.sigma2 = p > 0 ? Eigen::VectorXd((s.U.array().square().colwise().sum() / ws_.n).transpose())
                       : Eigen::VectorXd(0);
  diag.sigma2_preliminary = model.sigma2;
  if (p > 0 && config_.rescale) {
    const TauResult tr = rescale_scores(model, data, config_.tau_lo, config_.tau_hi);
    if (tr.fallback) diag.warnings.push_back("tau search failed to bracket a maximum; tau = 1");
  }
  Eigen::MatrixXd expo;
  ws_.log_likelihood(ws_.coefficients(model.c0, model.C, model.U), &expo);
  diag.day_integrals = (ws_.w.transpose() * expo).transpose();
  return result;
}

}  // namespace

void FitConfig::validate() const {
  if (components < 0) throw std::invalid_argument("component count must be >= 0");
  check_xi(xi1, xi2);
  if (max_outer_iters < 1) throw std::invalid_argument("max_outer_iters must be >= 1");
  if (!(objective_tol > 0.0) || !(score_tol > 0.0)) throw std::invalid_argument("tolerances must be positive");
  if (cv_folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  if (!(score_bound > 0.0)) throw std::invalid_argument("score bound must be positive");
  if (!(tau_lo > 0.0 && tau_hi > tau_lo)) throw std::invalid_argument("tau interval must satisfy 0 < lo < hi");
}

namespace {

void check_fit_inputs(const ReplicatedPointData& data, const SplineBasis& basis, const FitConfig& config) {
  config.validate();
  if (data.total() == 0) {
    throw InsufficientDataError("unit '" + data.unit + "' has no events in any replication");
  }
  if (data.n() < config.components + 2) {
    throw std::invalid_argument("need at least components + 2 replications");
  }
  if (config.components > basis.dimension() - 1) {
    throw std::invalid_argument("more components than periodic basis dimension");
  }
}

}  // namespace

FitResult fit_station(const ReplicatedPointData& data, const SplineBasis& basis, const FitConfig& config) {
  check_fit_inputs(data, basis, config);
  Fitter fitter(data, basis, config);
  return fitter.run();
}

FitResult fit_station(const ReplicatedPointData& data, const SplineBasis& basis, const FitConfig& config,
                      const StationModel& start) {
  check_fit_inputs(data, basis, config);
  Fitter fitter(data, basis, config);
  return fitter.run(&start);
}

// ---------------------------------------------------------------------------
// Score rescaling

double count_log_likelihood(const StationModel& model, const ReplicatedPointData& data, double tau) {
  Workspace ws(model.basis, data);
  Eigen::MatrixXd storage;
  const Eigen::MatrixXd& U = scores_for(model, ws.n, storage);
  const Eigen::MatrixXd theta = ws.coefficients(model.c0, model.C, tau * U);
  const Eigen::VectorXd integrals = ws.w.transpose() * (ws.B * theta).array().exp().matrix();
  double sum = 0.0;
  for (int i = 0; i < ws.n; ++i) sum += -integrals(i) + ws.m(i) * std::log(integrals(i));
  return sum;
}

TauResult rescale_scores(StationModel& model, const ReplicatedPointData& data, double lo, double hi) {
  TauResult out;
  if (!(lo > 0.0 && hi > lo)) throw std::invalid_argument("tau interval must satisfy 0 < lo < hi");
  if (model.components() == 0 || model.U.cwiseAbs().maxCoeff() == 0.0) return out;

  Workspace ws(model.basis, data);
  const Eigen::VectorXd base = ws.B * model.c0;
  const Eigen::MatrixXd variation = ws.B * model.C * model.U.transpose();  // G x n
  auto objective = [&](double tau) {
    const Eigen::VectorXd integrals =
        ws.w.transpose() * ((variation * tau).colwise() + base).array().exp().matrix();
    double sum = 0.0;
    for (int i = 0; i < ws.n; ++i) sum += -integrals(i) + ws.m(i) * std::log(integrals(i));
    return sum;
  };

  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double x0 = lo, x3 = hi;
  double x1 = x3 - ratio * (x3 - x0);
  double x2 = x0 + ratio * (x3 - x0);
  double f1 = objective(x1), f2 = objective(x2);
  double fmin = std::min(f1, f2), fmax = std::max(f1, f2);
  while (x3 - x0 > 1e-6) {
    if (f1 >= f2) {
      x3 = x2;
      x2 = x1;
      f2 = f1;
      x1 = x3 - ratio * (x3 - x0);
      f1 = objective(x1);
    } else {
      x0 = x1;
      x1 = x2;
      f1 = f2;
      x2 = x0 + ratio * (x3 - x0);
      f2 = objective(x2);
    }
    fmin = std::min({fmin, f1, f2});
    fmax = std::max({fmax, f1, f2});
  }
  const double tau = 0.5 * (x0 + x3);
  const double f_tau = objective(tau);
  const double f_one = objective(1.0);
  out.objective_at_one = f_one;
  if (fmax - fmin <= 1e-13 * std::max(1.0, std::abs(fmax))) {
    out.objective_at_tau = f_one;
    return out;
  }
  if (!(f_tau >= f_one)) {
    out.fallback = true;
    out.objective_at_tau = f_one;
    return out;
  }
  out.tau = tau;
  out.objective_at_tau = f_tau;
  model.tau *= tau;
  model.U *= tau;
  model.sigma2 *= tau * tau;
  return out;
}

// ---------------------------------------------------------------------------

ConstraintResiduals constraint_residuals(const StationModel& model) {
  ConstraintResiduals r;
  const int p = model.components();
  const Eigen::VectorXd d = model.basis.periodicity_vector();
  r.periodicity = std::abs(model.c0.dot(d));
  if (p == 0) return r;
  const Eigen::MatrixXd gram = model.C.transpose() * model.basis.gram() * model.C;
  r.orthonormality = (gram - Eigen::MatrixXd::Identity(p, p)).cwiseAbs().maxCoeff();
  r.periodicity = std::max(r.periodicity, (model.C.transpose() * d).cwiseAbs().maxCoeff());
  r.centering = model.U.colwise().mean().cwiseAbs().maxCoeff();
  Eigen::MatrixXd cross = model.U.transpose() * model.U / model.days();
  cross.diagonal().setZero();
  r.decorrelation = cross.cwiseAbs().maxCoeff();
  return r;
}

int select_ncomp(std::span<const double> score_variances, double threshold) {
  if (score_variances.empty()) throw std::invalid_argument("no score variances");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("threshold must be in (0, 1]");
  const double total = std::accumulate(score_variances.begin(), score_variances.end(), 0.0);
  double cum = 0.0;
  for (std::size_t k = 0; k < score_variances.size(); ++k) {
    cum += score_variances[k];
    if (cum >= threshold * total * (1.0 - 1e-12)) return static_cast<int>(k + 1);
  }
  return static_cast<int>(score_variances.size());
}

}  // namespace ppf
