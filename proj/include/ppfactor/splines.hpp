#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

namespace ppf {

/// Clamped B-spline basis on [a, b].
///
/// The knot vector carries `order`-fold repeats at both ends, so the first
/// basis function is the only one nonzero at `a` and the last the only one
/// nonzero at `b`. Gram and roughness matrices are computed once at
/// construction; the object is immutable afterwards and may be shared across
/// threads.
class SplineBasis {
 public:
  /// Builds a basis from an explicit knot vector (boundary repeats included).
  SplineBasis(std::vector<double> knots, int order);

  double start() const { return knots_.front(); }
  double end() const { return knots_.back(); }
  int order() const { return order_; }
  int dimension() const { return dimension_; }
  const std::vector<double>& knots() const { return knots_; }

  /// Distinct breakpoints a = x_0 < x_1 < ... < x_s = b.
  const std::vector<double>& breakpoints() const { return breaks_; }

  /// (beta_1(t), ..., beta_q(t)). Throws DomainError outside [a, b].
  Eigen::VectorXd eval(double t) const;

  /// Derivative of order `deriv` of every basis function at t.
  Eigen::VectorXd eval_derivative(double t, int deriv) const;

  Eigen::VectorXd eval_d2(double t) const { return eval_derivative(t, 2); }

  /// Row i holds eval(ts[i]).
  Eigen::MatrixXd design(std::span<const double> ts) const;

  /// J = int beta beta^T.
  const Eigen::MatrixXd& gram() const { return gram_; }

  /// Omega = int beta'' beta''^T. Throws UnsupportedOrderError for order < 3.
  const Eigen::MatrixXd& roughness() const;

  /// beta(a) - beta(b); c^T of this vector is the periodicity residual.
  Eigen::VectorXd periodicity_vector() const;

 private:
  int find_span(double t) const;
  void basis_derivatives(int span, double t, int nderiv, Eigen::MatrixXd& out) const;

  std::vector<double> knots_;
  std::vector<double> breaks_;
  int order_;
  int dimension_;
  Eigen::MatrixXd gram_;
  Eigen::MatrixXd roughness_;
};

/// Equally spaced interior knots on [a, b]; dimension n_interior + order.
SplineBasis make_basis(double a, double b, int n_interior, int order = 4);

/// Composite Gauss-Legendre rule, `points_per_span` nodes inside each knot span.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }
};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

QuadratureRule make_quadrature(const SplineBasis& basis, int points_per_span = 7);

double integrate(const QuadratureRule& rule, const std::function<double(double)>& integrand);

/// Integrates with the default 7-point-per-span rule of `basis`.
double integrate(const SplineBasis& basis, const std::function<double(double)>& integrand);

}  // namespace ppf
