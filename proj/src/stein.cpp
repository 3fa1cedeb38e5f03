#include "steinmc/stein.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "steinmc/errors.hpp"
#include "steinmc/parallel.hpp"

namespace steinmc {

namespace {

struct TensorRule {
  std::vector<double> points;  // n * d, already mapped through L
  std::vector<double> weights;
};

TensorRule tensor_hermite(const Mat& L, std::size_t order) {
  const auto d = static_cast<std::size_t>(L.rows());
  const QuadratureRule r = gauss_hermite_normal(order);
  std::size_t total = 1;
  for (std::size_t a = 0; a < d; ++a) total *= order;
  TensorRule t;
  t.points.resize(total * d);
  t.weights.resize(total);
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> raw(d);
  for (std::size_t p = 0; p < total; ++p) {
    double w = 1.0;
    for (std::size_t a = 0; a < d; ++a) {
      raw[a] = r.nodes[idx[a]];
      w *= r.weights[idx[a]];
    }
    for (std::size_t a = 0; a < d; ++a) {
      double s = 0.0;
      for (std::size_t c = 0; c <= a; ++c) s += L(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) * raw[c];
      t.points[p * d + a] = s;
    }
    t.weights[p] = w;
    for (std::size_t a = 0; a < d; ++a) {
      if (++idx[a] < order) break;
      idx[a] = 0;
    }
  }
  return t;
}

Mat validated_sigma(const Mat& sigma, std::size_t d) {
  if (static_cast<std::size_t>(sigma.rows()) != d || sigma.rows() != sigma.cols())
    throw DomainError("covariance dimension does not match the test function");
  if (asymmetry(sigma) > 1e-12) throw DomainError("covariance must be symmetric");
  if (!(min_eigenvalue(sigma) > 0.0)) throw NumericError("covariance is not positive definite");
  return 0.5 * (sigma + sigma.transpose());
}

}  // namespace

double gaussian_expectation(const TestFunction& h, const Mat& sigma, std::size_t order) {
  const std::size_t d = h.dim();
  const TensorRule t = tensor_hermite(cholesky_lower(validated_sigma(sigma, d)), order);
  std::vector<double> vals(t.weights.size());
  for (std::size_t p = 0; p < vals.size(); ++p) vals[p] = t.weights[p] * h.value(&t.points[p * d]);
  return pairwise_sum(vals.begin(), vals.end());
}

SteinSolution::SteinSolution(TestFunctionPtr h, Mat sigma, SteinQuadrature q)
    : h_(std::move(h)), q_(q), d_(h_->dim()) {
  if (d_ < 1 || d_ > 3) throw DomainError("Stein solver supports 1 <= d <= 3");
  if (q_.hermite_order < 1 || q_.time_nodes < 1) throw DomainError("quadrature orders must be positive");
  sigma_ = validated_sigma(sigma, d_);
  const TensorRule t = tensor_hermite(cholesky_lower(sigma_), q_.hermite_order);
  // Tensor nodes below 1e-16 in weight carry < 1e-13 of the mass up to order
  // 40 in d = 3; dropping them cuts the solver cost by 1.5-4x for d >= 2.
  for (std::size_t k = 0; k < t.weights.size(); ++k) {
    if (d_ > 1 && t.weights[k] < 1e-16) continue;
    zw_.push_back(t.weights[k]);
    z_.insert(z_.end(), t.points.begin() + static_cast<std::ptrdiff_t>(k * d_),
              t.points.begin() + static_cast<std::ptrdiff_t>((k + 1) * d_));
  }
  phi_ = gaussian_expectation(*h_, sigma_, q_.hermite_order);
  phi_gap_ = std::abs(phi_ - gaussian_expectation(*h_, sigma_, q_.hermite_order + 4));
  const QuadratureRule r = gauss_legendre(q_.time_nodes, 0.0, 0.5 * std::numbers::pi);
  for (std::size_t j = 0; j < r.size(); ++j) {
    sin_.push_back(std::sin(r.nodes[j]));
    cos_.push_back(std::cos(r.nodes[j]));
    tw_.push_back(r.weights[j]);
  }
}

void SteinSolution::accumulate(const double* w, double* A, double* grad, double* hess) const {
  const std::size_t d = d_;
  const std::size_t npts = zw_.size();
  double acc_A = 0.0;
  double acc_g[3] = {0.0, 0.0, 0.0};
  double acc_H[9] = {0.0};
  double p[3], g[3], H[9], v;
  for (std::size_t j = 0; j < sin_.size(); ++j) {
    const double u = sin_[j], c = cos_[j];
    double e_v = 0.0, e_g[3] = {0.0, 0.0, 0.0}, e_H[9] = {0.0};
    for (std::size_t k = 0; k < npts; ++k) {
      for (std::size_t a = 0; a < d; ++a) p[a] = u * w[a] + c * z_[k * d + a];
      h_->evaluate(p, A ? &v : nullptr, grad ? g : nullptr, hess ? H : nullptr);
      const double wk = zw_[k];
      if (A) e_v += wk * v;
      if (grad)
        for (std::size_t a = 0; a < d; ++a) e_g[a] += wk * g[a];
      if (hess)
        for (std::size_t a = 0; a < d * d; ++a) e_H[a] += wk * H[a];
    }
    // du = cos(theta) dtheta
    const double wt = tw_[j] * c;
    if (A) acc_A -= wt * (e_v - phi_) / u;
    if (grad)
      for (std::size_t a = 0; a < d; ++a) acc_g[a] -= wt * e_g[a];
    if (hess)
      for (std::size_t a = 0; a < d * d; ++a) acc_H[a] -= wt * u * e_H[a];
  }
  if (A) *A = acc_A;
  if (grad) std::copy(acc_g, acc_g + d, grad);
  if (hess) std::copy(acc_H, acc_H + d * d, hess);
}

SteinSolution::Value SteinSolution::evaluate(const Vec& w) const {
  if (static_cast<std::size_t>(w.size()) != d_) throw DomainError("point dimension mismatch");
  Value out;
  out.grad.resize(static_cast<Eigen::Index>(d_));
  Mat H(static_cast<Eigen::Index>(d_), static_cast<Eigen::Index>(d_));
  std::vector<double> hb(d_ * d_);
  accumulate(w.data(), &out.A, out.grad.data(), hb.data());
  for (std::size_t a = 0; a < d_; ++a)
    for (std::size_t b = 0; b < d_; ++b)
      H(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = hb[a * d_ + b];
  out.hess = 0.5 * (H + H.transpose());
  return out;
}

void SteinSolution::derivatives(const double* w, double* grad, double* hess) const {
  accumulate(w, nullptr, grad, hess);
}

SteinSolution::Value solve_stein_at(const SteinSolution& sol, const Vec& w) { return sol.evaluate(w); }

double stein_residual(const SteinSolution& sol, const Vec& w) {
  const auto v = sol.evaluate(w);
  const double lhs = (sol.sigma() * v.hess).trace() - w.dot(v.grad);
  return std::abs(lhs - sol.h().value(w.data()) + sol.phi());
}

double DerivativeBoundReport::worst() const {
  double m = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 3; ++k)
    if (checked[k]) m = std::min(m, margin[k]);
  return m;
}

std::vector<Vec> tensor_grid(std::size_t d, std::size_t points, double lo, double hi) {
  std::size_t total = 1;
  for (std::size_t a = 0; a < d; ++a) total *= points;
  std::vector<Vec> out;
  out.reserve(total);
  std::vector<std::size_t> idx(d, 0);
  const double step = points > 1 ? (hi - lo) / static_cast<double>(points - 1) : 0.0;
  for (std::size_t p = 0; p < total; ++p) {
    Vec w(static_cast<Eigen::Index>(d));
    for (std::size_t a = 0; a < d; ++a) w(static_cast<Eigen::Index>(a)) = lo + step * static_cast<double>(idx[a]);
    out.push_back(std::move(w));
    for (std::size_t a = 0; a < d; ++a) {
      if (++idx[a] < points) break;
      idx[a] = 0;
    }
  }
  return out;
}

DerivativeBoundReport derivative_bound_check(const SteinSolution& sol, const std::vector<Vec>& grid,
                                             bool third_order, std::size_t threads, std::vector<double>* residuals) {
  const std::size_t d = sol.dim();
  const std::size_t n = grid.size();
  if (residuals) residuals->assign(n, 0.0);
  // Per point: |grad| (d), |hess| (d*d), |third by differences| (d*d*d).
  const std::size_t stride = d + d * d + (third_order ? d * d * d : 0);
  std::vector<double> vals(n * stride, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<double> g(d), H(d * d), Hp(d * d), Hm(d * d);
    double* out = &vals[i * stride];
    sol.derivatives(grid[i].data(), g.data(), H.data());
    for (std::size_t a = 0; a < d; ++a) out[a] = std::abs(g[a]);
    for (std::size_t a = 0; a < d * d; ++a) out[d + a] = std::abs(H[a]);
    if (residuals) {
      double lhs = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        lhs -= grid[i](static_cast<Eigen::Index>(a)) * g[a];
        for (std::size_t c = 0; c < d; ++c)
          lhs += sol.sigma()(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) * H[c * d + a];
      }
      (*residuals)[i] = std::abs(lhs - sol.h().value(grid[i].data()) + sol.phi());
    }
    if (third_order) {
      const double step = 1e-4;
      Vec wp = grid[i], wm = grid[i];
      for (std::size_t c = 0; c < d; ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        wp(ci) += step;
        wm(ci) -= step;
        sol.derivatives(wp.data(), g.data(), Hp.data());
        sol.derivatives(wm.data(), g.data(), Hm.data());
        for (std::size_t ab = 0; ab < d * d; ++ab)
          out[d + d * d + ab * d + c] = std::abs((Hp[ab] - Hm[ab]) / (2.0 * step));
        wp(ci) = wm(ci) = grid[i](ci);
      }
    }
  });
  DerivativeBoundReport r;
  const int max_k = third_order ? 3 : 2;
  for (int k = 1; k <= max_k; ++k) {
    r.checked[k] = true;
    r.margin[k] = std::numeric_limits<double>::infinity();
  }
  auto update = [&](int k, const std::vector<int>& t, std::size_t offset) {
    double mx = 0.0;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, vals[i * stride + offset]);
    const double bound = sol.h().partial_sup(t) / static_cast<double>(k);
    r.max_partial[k] = std::max(r.max_partial[k], mx);
    if (std::isfinite(bound)) r.margin[k] = std::min(r.margin[k], bound - mx);
  };
  for (std::size_t a = 0; a < d; ++a) {
    std::vector<int> t(d, 0);
    t[a] = 1;
    update(1, t, a);
    for (std::size_t b = 0; b < d; ++b) {
      std::vector<int> t2(d, 0);
      ++t2[a];
      ++t2[b];
      update(2, t2, d + a * d + b);
      if (third_order)
        for (std::size_t c = 0; c < d; ++c) {
          std::vector<int> t3 = t2;
          ++t3[c];
          update(3, t3, d + d * d + (a * d + b) * d + c);
        }
    }
  }
  return r;
}

UnivariateValue univariate_solution(const SteinSolution& sol, double w) {
  double g, H;
  sol.derivatives(&w, &g, &H);
  return {g, H};
}

UnivariateBoundReport univariate_bound_check(const TestFunctionPtr& h, const std::vector<double>& grid,
                                             SteinQuadrature q) {
  if (h->dim() != 1) throw DomainError("univariate bound check needs d = 1");
  if (h->lipschitz() > 1.0 + 1e-12) throw DomainError("univariate bound check needs Lip(h) <= 1");
  const SteinSolution sol(h, Mat::Identity(1, 1), q);
  UnivariateBoundReport r;
  const double step = 1e-4;
  for (double w : grid) {
    const auto v = univariate_solution(sol, w);
    const double a2 = (univariate_solution(sol, w + step).A1 - univariate_solution(sol, w - step).A1) / (2.0 * step);
    r.sup_A = std::max(r.sup_A, std::abs(v.A));
    r.sup_A1 = std::max(r.sup_A1, std::abs(v.A1));
    r.sup_A2 = std::max(r.sup_A2, std::abs(a2));
  }
  r.margin_A = 2.0 - r.sup_A;
  r.margin_A1 = std::sqrt(2.0 / std::numbers::pi) - r.sup_A1;
  r.margin_A2 = 2.0 - r.sup_A2;
  return r;
}

Mat checked_inverse(const Mat& b) {
  if (b.rows() != b.cols() || b.rows() == 0) throw DomainError("normalization must be a square matrix");
  Eigen::FullPivLU<Mat> lu(b);
  if (!lu.isInvertible()) throw DomainError("normalization matrix is singular");
  return lu.inverse();
}

namespace {

Mat hessian_at(const TestFunction& h, const Vec& p) {
  const auto d = p.size();
  Mat H(d, d);
  std::vector<double> buf(static_cast<std::size_t>(d * d));
  h.hessian(p.data(), buf.data());
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) H(a, b) = buf[static_cast<std::size_t>(a * d + b)];
  return H;
}

}  // namespace

Mat g_h_evaluate(const TestFunction& h, const Mat& b, const GhParams& p, const Vec& x, const Vec& y) {
  const Mat bi = checked_inverse(b);
  if (p.t == 0.0) return Mat::Zero(b.rows(), b.cols());
  const Vec p0 = p.s * (bi * x) + p.z;
  const Vec p1 = p.s * (bi * (x + p.t * y)) + p.z;
  return bi * (hessian_at(h, p1) - hessian_at(h, p0)) * bi;
}

std::vector<Mat> g_h_gradient(const TestFunction& h, const Mat& b, const GhParams& p, const Vec& x,
                              const Vec& y) {
  const Mat bi = checked_inverse(b);
  const auto d = b.rows();
  const auto du = static_cast<std::size_t>(d);
  const Vec p0 = p.s * (bi * x) + p.z;
  const Vec p1 = p.s * (bi * (x + p.t * y)) + p.z;
  std::vector<double> T0(du * du * du), T1(du * du * du);
  h.third(p0.data(), T0.data());
  h.third(p1.data(), T1.data());
  // d/dx_c D^2h(s b^{-1} x + ...) = sum_e D^3h[., ., e] s bi(e, c)
  std::vector<Mat> out;
  for (int which = 0; which < 2; ++which)
    for (Eigen::Index c = 0; c < d; ++c) {
      Mat M = Mat::Zero(d, d);
      for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index bb = 0; bb < d; ++bb)
          for (Eigen::Index e = 0; e < d; ++e) {
            const auto idx = static_cast<std::size_t>((a * d + bb) * d + e);
            const double dir = p.s * bi(e, c);
            M(a, bb) += which == 0 ? (T1[idx] - T0[idx]) * dir : T1[idx] * dir * p.t;
          }
      out.push_back(bi * M * bi);
    }
  return out;
}

GhNorms g_h_norms(const TestFunction& h, const Mat& b, const GhParams& p, const std::vector<Vec>& xs,
                  const std::vector<Vec>& ys) {
  GhNorms n;
  for (const auto& x : xs)
    for (const auto& y : ys) {
      n.sup = std::max(n.sup, spectral_norm(g_h_evaluate(h, b, p, x, y)));
      for (const auto& M : g_h_gradient(h, b, p, x, y)) n.grad_sup = std::max(n.grad_sup, spectral_norm(M));
    }
  return n;
}

}  // namespace steinmc
