#include "steinmc/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include <Eigen/Dense>

#include "steinmc/errors.hpp"

namespace steinmc {

namespace {

// Newton iteration on P_n from Chebyshev-like starting points.
QuadratureRule legendre_unit(std::size_t n) {
  QuadratureRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  const double nn = static_cast<double>(n);
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (nn + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double kk = static_cast<double>(k);
        const double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = nn * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged node.
    double p0 = 1.0, p1 = x;
    for (std::size_t k = 2; k <= n; ++k) {
      const double kk = static_cast<double>(k);
      const double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
      p0 = p1;
      p1 = p2;
    }
    if (n == 1) p0 = 1.0;
    dp = nn * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    r.nodes[i] = -x;
    r.nodes[n - 1 - i] = x;
    r.weights[i] = r.weights[n - 1 - i] = w;
  }
  return r;
}

// Golub-Welsch on the probabilists' Hermite recurrence, then Newton polish.
QuadratureRule hermite_normal(std::size_t n) {
  QuadratureRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  if (n == 1) {
    r.nodes[0] = 0.0;
    r.weights[0] = 1.0;
    return r;
  }
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 1; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    J(i - 1, i) = J(i, i - 1) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  if (es.info() != Eigen::Success) throw NumericError("Gauss-Hermite eigenproblem failed");
  // Normalized recurrence: q_k = He_k / sqrt(k!) keeps values bounded.
  auto eval = [n](double x, double& qn, double& qn1) {
    double q0 = 1.0, q1 = x;
    for (std::size_t k = 1; k < n; ++k) {
      const double kk = static_cast<double>(k);
      const double q2 = (x * q1 - std::sqrt(kk) * q0) / std::sqrt(kk + 1.0);
      q0 = q1;
      q1 = q2;
    }
    qn = q1;
    qn1 = q0;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double x = es.eigenvalues()(static_cast<Eigen::Index>(i));
    for (int it = 0; it < 4; ++it) {
      double qn, qn1;
      eval(x, qn, qn1);
      // d/dx q_n = sqrt(n) q_{n-1}
      const double dx = qn / (std::sqrt(static_cast<double>(n)) * qn1);
      x -= dx;
      if (std::abs(dx) < 1e-15 * (1.0 + std::abs(x))) break;
    }
    double qn, qn1;
    eval(x, qn, qn1);
    r.nodes[i] = x;
    r.weights[i] = 1.0 / (static_cast<double>(n) * qn1 * qn1);
    total += r.weights[i];
  }
  for (double& w : r.weights) w /= total;
  // Symmetrize to remove rounding asymmetry.
  for (std::size_t i = 0; i < n / 2; ++i) {
    const double x = 0.5 * (r.nodes[n - 1 - i] - r.nodes[i]);
    const double w = 0.5 * (r.weights[i] + r.weights[n - 1 - i]);
    r.nodes[i] = -x;
    r.nodes[n - 1 - i] = x;
    r.weights[i] = r.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) r.nodes[n / 2] = 0.0;
  return r;
}

template <class F>
const QuadratureRule& cached(std::map<std::size_t, QuadratureRule>& cache, std::mutex& mu, std::size_t n, F make) {
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make(n)).first;
  return it->second;
}

}  // namespace

QuadratureRule gauss_legendre(std::size_t n, double a, double b) {
  if (n == 0) throw DomainError("quadrature order must be positive");
  static std::map<std::size_t, QuadratureRule> cache;
  static std::mutex mu;
  QuadratureRule r = cached(cache, mu, n, legendre_unit);
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  for (std::size_t i = 0; i < n; ++i) {
    r.nodes[i] = mid + half * r.nodes[i];
    r.weights[i] *= half;
  }
  return r;
}

QuadratureRule composite_gauss_legendre(std::size_t k, std::size_t panels, double a, double b) {
  if (panels == 0) throw DomainError("composite rule needs at least one panel");
  QuadratureRule out;
  const double h = (b - a) / static_cast<double>(panels);
  for (std::size_t p = 0; p < panels; ++p) {
    const double lo = a + h * static_cast<double>(p);
    const double hi = p + 1 == panels ? b : lo + h;
    const QuadratureRule r = gauss_legendre(k, lo, hi);
    out.nodes.insert(out.nodes.end(), r.nodes.begin(), r.nodes.end());
    out.weights.insert(out.weights.end(), r.weights.begin(), r.weights.end());
  }
  return out;
}

QuadratureRule gauss_hermite_normal(std::size_t n) {
  if (n == 0) throw DomainError("quadrature order must be positive");
  static std::map<std::size_t, QuadratureRule> cache;
  static std::mutex mu;
  return cached(cache, mu, n, hermite_normal);
}

}  // namespace steinmc
