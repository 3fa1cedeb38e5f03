#pragma once

#include <cstddef>
#include <vector>

#include "steinmc/linalg.hpp"
#include "steinmc/quadrature.hpp"
#include "steinmc/test_functions.hpp"

namespace steinmc {

struct SteinQuadrature {
  std::size_t hermite_order = 20;  // per axis, tensorized
  std::size_t time_nodes = 24;     // Gauss-Legendre nodes in theta, u = sin(theta)
};

// Quadrature approximation of the solution
//   A(w) = -int_0^1 { E h(u w + sqrt(1-u^2) Z) - Phi_Sigma(h) } / u du,
// Z ~ N(0, Sigma), of tr(Sigma D^2 A) - w.grad A = h - Phi_Sigma(h).
//
// With u = sin(theta) the integrand is smooth on [0, pi/2], so a fixed
// Gauss-Legendre rule converges spectrally. The gradient and Hessian are the
// exact derivatives of the same discretized A, which keeps identities that
// rely on the fundamental theorem of calculus exact.
class SteinSolution {
 public:
  SteinSolution(TestFunctionPtr h, Mat sigma, SteinQuadrature q = {});

  struct Value {
    double A = 0.0;
    Vec grad;
    Mat hess;
  };

  std::size_t dim() const { return d_; }
  const TestFunction& h() const { return *h_; }
  const TestFunctionPtr& h_ptr() const { return h_; }
  const Mat& sigma() const { return sigma_; }
  const SteinQuadrature& quadrature() const { return q_; }
  double phi() const { return phi_; }
  // |Phi_Sigma(h) at order n - at order n+4|, and whether it exceeds 1e-8.
  double phi_discrepancy() const { return phi_gap_; }
  bool quadrature_warning() const { return phi_gap_ > 1e-8; }

  Value evaluate(const Vec& w) const;
  // Gradient and Hessian only (row-major H), the inner loop of decompositions.
  void derivatives(const double* w, double* grad, double* hess) const;

 private:
  void accumulate(const double* w, double* A, double* grad, double* hess) const;

  TestFunctionPtr h_;
  Mat sigma_;
  SteinQuadrature q_;
  std::size_t d_;
  double phi_ = 0.0;
  double phi_gap_ = 0.0;
  // Tensor Gauss-Hermite points mapped through the Cholesky factor.
  std::vector<double> z_;       // points * d
  std::vector<double> zw_;      // weights
  std::vector<double> sin_, cos_, tw_;
};

// E h(Z), Z ~ N(0, sigma), by tensor Gauss-Hermite of the given order.
double gaussian_expectation(const TestFunction& h, const Mat& sigma, std::size_t order);

SteinSolution::Value solve_stein_at(const SteinSolution& sol, const Vec& w);

// |tr(Sigma D^2 A(w)) - w.grad A(w) - h(w) + Phi_Sigma(h)|
double stein_residual(const SteinSolution& sol, const Vec& w);

struct DerivativeBoundReport {
  // For each order k: min over partials t with |t| = k of
  //   (1/k) sup|d^t h| - max_grid |d^t A|.
  double margin[4] = {0.0, 0.0, 0.0, 0.0};
  double max_partial[4] = {0.0, 0.0, 0.0, 0.0};
  bool checked[4] = {false, false, false, false};
  double worst() const;
};

// Orders 1 and 2 from the analytic derivatives; order 3 (optional) from
// central differences of the Hessian. When `residuals` is given it receives
// the Stein residual at each grid point, computed from the same derivatives.
DerivativeBoundReport derivative_bound_check(const SteinSolution& sol, const std::vector<Vec>& grid,
                                             bool third_order = false, std::size_t threads = 1,
                                             std::vector<double>* residuals = nullptr);

// Tensor grid with `points` nodes per axis on [lo, hi]^d.
std::vector<Vec> tensor_grid(std::size_t d, std::size_t points, double lo, double hi);

struct UnivariateBoundReport {
  double sup_A = 0.0, sup_A1 = 0.0, sup_A2 = 0.0;
  double margin_A = 0.0, margin_A1 = 0.0, margin_A2 = 0.0;
  bool passed(double tol = 1e-6) const { return margin_A >= -tol && margin_A1 >= -tol && margin_A2 >= -tol; }
};

// Solution of A' - wA = h - Phi_1(h) for 1-Lipschitz h, obtained as the
// derivative of the multivariate solution with d = 1, Sigma = 1. Checks
// ||A|| <= 2, ||A'|| <= sqrt(2/pi), ||A''|| <= 2 on the grid (A'' by central
// differences of A').
UnivariateBoundReport univariate_bound_check(const TestFunctionPtr& h, const std::vector<double>& grid,
                                             SteinQuadrature q = {40, 64});

struct UnivariateValue {
  double A, A1;
};
UnivariateValue univariate_solution(const SteinSolution& sol, double w);

// Inverse of b; DomainError when b is singular.
Mat checked_inverse(const Mat& b);

// G_h(x,y) = b^{-1} [D^2 h(s b^{-1}(x + t y) + z) - D^2 h(s b^{-1} x + z)] b^{-1}
struct GhParams {
  double s = 1.0, t = 1.0;
  Vec z;
};

// Throws DomainError when b is singular.
Mat g_h_evaluate(const TestFunction& h, const Mat& b, const GhParams& p, const Vec& x, const Vec& y);

// Partial derivatives of G_h in the 2d coordinates of (x, y), as d x d matrices.
std::vector<Mat> g_h_gradient(const TestFunction& h, const Mat& b, const GhParams& p, const Vec& x,
                              const Vec& y);

struct GhNorms {
  double sup = 0.0;       // max spectral norm of G_h over the sample
  double grad_sup = 0.0;  // max spectral norm of a partial derivative
};

GhNorms g_h_norms(const TestFunction& h, const Mat& b, const GhParams& p, const std::vector<Vec>& xs,
                  const std::vector<Vec>& ys);

}  // namespace steinmc
