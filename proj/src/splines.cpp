#include "ppfactor/splines.hpp"

#include "ppfactor/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace ppf {

namespace {

void check_knots(const std::vector<double>& knots, int order) {
  if (order < 2) throw std::invalid_argument("spline order must be >= 2");
  const auto k = static_cast<std::size_t>(order);
  if (knots.size() < 2 * k) throw std::invalid_argument("knot vector too short for order");
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] >= knots[i - 1])) throw std::invalid_argument("knots must be nondecreasing");
  }
  for (std::size_t i = 1; i < k; ++i) {
    if (knots[i] != knots[0] || knots[knots.size() - 1 - i] != knots.back()) {
      throw std::invalid_argument("boundary knots must be repeated order-fold");
    }
  }
  if (!(knots.back() > knots.front())) throw std::invalid_argument("empty spline domain");
}

}  // namespace

SplineBasis::SplineBasis(std::vector<double> knots, int order)
    : knots_(std::move(knots)), order_(order) {
  check_knots(knots_, order_);
  dimension_ = static_cast<int>(knots_.size()) - order_;
  for (double x : knots_) {
    if (breaks_.empty() || x > breaks_.back()) breaks_.push_back(x);
  }

  // Gauss-Legendre with max(7, order) points is exact for degree 2*order - 2.
  const int npts = std::max(7, order_);
  std::vector<double> gx, gw;
  gauss_legendre(npts, gx, gw);

  const int q = dimension_;
  gram_ = Eigen::MatrixXd::Zero(q, q);
  if (order_ >= 3) roughness_ = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd ders(3, order_);
  for (std::size_t s = 0; s + 1 < breaks_.size(); ++s) {
    const double lo = breaks_[s];
    const double hi = breaks_[s + 1];
    const double half = 0.5 * (hi - lo);
    const double mid = 0.5 * (hi + lo);
    for (int g = 0; g < npts; ++g) {
      const double t = mid + half * gx[g];
      const double w = half * gw[g];
      const int span = find_span(t);
      basis_derivatives(span, t, 2, ders);
      const int first = span - order_ + 1;
      for (int r = 0; r < order_; ++r) {
        for (int c = 0; c < order_; ++c) {
          gram_(first + r, first + c) += w * ders(0, r) * ders(0, c);
          if (order_ >= 3) roughness_(first + r, first + c) += w * ders(2, r) * ders(2, c);
        }
      }
    }
  }
  // Exact symmetry; the accumulation above is symmetric up to roundoff only.
  gram_ = 0.5 * (gram_ + gram_.transpose()).eval();
  if (order_ >= 3) roughness_ = 0.5 * (roughness_ + roughness_.transpose()).eval();
}

const Eigen::MatrixXd& SplineBasis::roughness() const {
  if (order_ < 3) {
    throw UnsupportedOrderError("roughness matrix needs order >= 3, got " + std::to_string(order_));
  }
  return roughness_;
}

int SplineBasis::find_span(double t) const {
  const int p = order_ - 1;
  const int last = dimension_ - 1;
  if (t >= knots_[last + 1]) return last;
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  int span = static_cast<int>(it - knots_.begin()) - 1;
  return std::clamp(span, p, last);
}

// Nonzero basis functions and their derivatives on one span
// (Piegl & Tiller, algorithm A2.3). out(d, r) is the d-th derivative of
// basis function span - order + 1 + r.
void SplineBasis::basis_derivatives(int span, double t, int nderiv, Eigen::MatrixXd& out) const {
  const int p = order_ - 1;
  out.setZero(nderiv + 1, p + 1);
  Eigen::MatrixXd ndu(p + 1, p + 1);
  std::vector<double> left(p + 1), right(p + 1);
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - knots_[span + 1 - j];
    right[j] = knots_[span + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }
  for (int j = 0; j <= p; ++j) out(0, j) = ndu(j, p);

  const int n = std::min(nderiv, p);
  Eigen::MatrixXd a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a(0, 0) = 1.0;
    for (int k = 1; k <= n; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      out(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= n; ++k) {
    out.row(k) *= factor;
    factor *= (p - k);
  }
}

Eigen::VectorXd SplineBasis::eval(double t) const { return eval_derivative(t, 0); }

Eigen::VectorXd SplineBasis::eval_derivative(double t, int deriv) const {
  if (!(t >= start() && t <= end())) {
    throw DomainError("t = " + std::to_string(t) + " outside spline domain [" +
                      std::to_string(start()) + ", " + std::to_string(end()) + "]");
  }
  if (deriv < 0) throw std::invalid_argument("negative derivative order");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dimension_);
  if (deriv >= order_) return out;
  const int span = find_span(t);
  Eigen::MatrixXd ders;
  basis_derivatives(span, t, deriv, ders);
  out.segment(span - order_ + 1, order_) = ders.row(deriv).transpose();
  return out;
}

Eigen::MatrixXd SplineBasis::design(std::span<const double> ts) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ts.size()), dimension_);
  for (std::size_t i = 0; i < ts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = eval(ts[i]).transpose();
  return out;
}

Eigen::VectorXd SplineBasis::periodicity_vector() const { return eval(start()) - eval(end()); }

SplineBasis make_basis(double a, double b, int n_interior, int order) {
  if (!(b > a) || !std::isfinite(a) || !std::isfinite(b)) {
    throw std::invalid_argument("basis domain requires finite a < b");
  }
  if (n_interior < 0) throw std::invalid_argument("interior knot count must be >= 0");
  if (order < 2) throw std::invalid_argument("spline order must be >= 2");
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(n_interior + 2 * order));
  knots.insert(knots.end(), static_cast<std::size_t>(order), a);
  for (int i = 1; i <= n_interior; ++i) {
    knots.push_back(a + (b - a) * static_cast<double>(i) / static_cast<double>(n_interior + 1));
  }
  knots.insert(knots.end(), static_cast<std::size_t>(order), b);
  return SplineBasis(std::move(knots), order);
}

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  if (n < 1) throw std::invalid_argument("Gauss-Legendre rule needs at least one node");
  nodes.assign(static_cast<std::size_t>(n), 0.0);
  weights.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged node for the weight.
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = (n == 1) ? 1.0 : n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = w;
    weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) nodes[n / 2] = 0.0;
}

QuadratureRule make_quadrature(const SplineBasis& basis, int points_per_span) {
  std::vector<double> gx, gw;
  gauss_legendre(points_per_span, gx, gw);
  QuadratureRule rule;
  const auto& br = basis.breakpoints();
  for (std::size_t s = 0; s + 1 < br.size(); ++s) {
    const double half = 0.5 * (br[s + 1] - br[s]);
    const double mid = 0.5 * (br[s + 1] + br[s]);
    for (std::size_t g = 0; g < gx.size(); ++g) {
      rule.nodes.push_back(mid + half * gx[g]);
      rule.weights.push_back(half * gw[g]);
    }
  }
  return rule;
}

double integrate(const QuadratureRule& rule, const std::function<double(double)>& integrand) {
  double sum = 0.0;
  for (std::size_t g = 0; g < rule.size(); ++g) sum += rule.weights[g] * integrand(rule.nodes[g]);
  return sum;
}

double integrate(const SplineBasis& basis, const std::function<double(double)>& integrand) {
  return integrate(make_quadrature(basis), integrand);
}

}  // namespace ppf
