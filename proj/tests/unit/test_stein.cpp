#include <cmath>
#include <numbers>

#include "doctest.h"
#include "steinmc/errors.hpp"
#include "steinmc/mollifier.hpp"
#include "steinmc/rng.hpp"
#include "steinmc/stein.hpp"

using namespace steinmc;

namespace {

// h(w) = w^3 / 6, only for the G_h hand check.
class Cubic final : public TestFunction {
 public:
  std::size_t dim() const override { return 1; }
  std::string name() const override { return "cubic"; }
  double value(const double* w) const override { return w[0] * w[0] * w[0] / 6.0; }
  void gradient(const double* w, double* g) const override { g[0] = 0.5 * w[0] * w[0]; }
  void hessian(const double* w, double* H) const override { H[0] = w[0]; }
  void third(const double*, double* T) const override { T[0] = 1.0; }
  double partial_sup(const std::vector<int>& t) const override { return t[0] == 3 ? 1.0 : INFINITY; }
  double lipschitz() const override { return INFINITY; }
};

Mat random_spd(std::size_t d, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(d);
  Mat a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = rng.normal();
  return a.transpose() * a / static_cast<double>(d) + 0.5 * Mat::Identity(n, n);
}

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

double log_lipschitz(double r) { return r <= 0.0 ? 0.0 : r < 1.0 ? r * (1.0 + std::log(1.0 / r)) : 1.0; }

}  // namespace

TEST_SUITE("stein") {

TEST_CASE("test function gradients match finite differences") {
  Rng rng(9);
  for (std::size_t d = 1; d <= 3; ++d)
    for (const auto& h : builtin_family(d))
      for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> w(d), g(d), H(d * d), T(d * d * d);
        for (auto& x : w) x = rng.uniform(-2.5, 2.5);
        h->gradient(w.data(), g.data());
        h->hessian(w.data(), H.data());
        for (std::size_t a = 0; a < d; ++a) {
          const double step = 1e-5;
          auto wp = w, wm = w;
          wp[a] += step;
          wm[a] -= step;
          CHECK(std::abs((h->value(wp.data()) - h->value(wm.data())) / (2 * step) - g[a]) <= 1e-6);
          std::vector<double> gp(d), gm(d);
          h->gradient(wp.data(), gp.data());
          h->gradient(wm.data(), gm.data());
          for (std::size_t b = 0; b < d; ++b) CHECK(std::abs((gp[b] - gm[b]) / (2 * step) - H[a * d + b]) <= 1e-6);
        }
        // the quadratic's gradient is unbounded; every other declared bound is finite
        for (int k = h->name() == "quadratic" ? 2 : 1; k <= 3; ++k) CHECK(std::isfinite(h->norm(k)));
      }
}

TEST_CASE("closed-form Stein solutions") {
  Rng rng(4);
  for (std::size_t d = 1; d <= 3; ++d) {
    const Mat sigma = random_spd(d, rng);
    Vec v(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
    const SteinSolution sol(make_affine(v, 0.7), sigma);
    for (int trial = 0; trial < 10; ++trial) {
      Vec w(static_cast<Eigen::Index>(d));
      for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.uniform(-3, 3);
      const auto r = solve_stein_at(sol, w);
      CHECK(r.A == doctest::Approx(-v.dot(w)).epsilon(1e-12));
      CHECK((r.grad + v).norm() <= 1e-12);
      CHECK(r.hess.norm() <= 1e-12);
      CHECK(stein_residual(sol, w) <= 1e-10);
    }
  }
  const SteinSolution sq(make_quadratic(Mat::Identity(1, 1), Vec::Zero(1)), Mat::Identity(1, 1));
  CHECK(solve_stein_at(sq, vec({2.0})).A == doctest::Approx(-1.5).epsilon(1e-12));
  CHECK(stein_residual(sq, vec({2.0})) <= 1e-10);

  const SteinSolution zero(make_affine(Vec::Zero(2), 3.0), Mat::Identity(2, 2));
  const auto z = solve_stein_at(zero, vec({0.4, -1.1}));
  CHECK(std::abs(z.A) <= 1e-12);  // h - Phi(h) vanishes up to the rounding of the Gaussian quadrature
  CHECK(z.grad.norm() == 0.0);
}

TEST_CASE("Stein solution rejects bad covariances") {
  CHECK_THROWS(SteinSolution(make_affine(Vec::Ones(2)), Mat::Zero(2, 2)));
  Mat asym(2, 2);
  asym << 1.0, 0.2, 0.1, 1.0;
  CHECK_THROWS(SteinSolution(make_affine(Vec::Ones(2)), asym));
  CHECK_THROWS(SteinSolution(make_affine(Vec::Ones(4)), Mat::Identity(4, 4)));
}

TEST_CASE("smooth bump residual on a 5x5 grid") {
  Mat sigma(2, 2);
  sigma << 1.2, 0.3, 0.3, 0.8;
  const SteinSolution sol(make_gaussian_bump(vec({0.2, -0.1}), 1.0), sigma);
  for (const auto& w : tensor_grid(2, 5, -2.0, 2.0)) CHECK(stein_residual(sol, w) <= 1e-4);
}

TEST_CASE("derivative bounds") {
  const SteinSolution lin(make_affine(vec({1.0}), 0.0), Mat::Identity(1, 1));
  const auto r = derivative_bound_check(lin, tensor_grid(1, 21, -3, 3));
  CHECK(r.max_partial[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(r.margin[1]) <= 1e-12);

  const SteinSolution cst(make_affine(Vec::Zero(1), 2.0), Mat::Identity(1, 1));
  const auto c = derivative_bound_check(cst, tensor_grid(1, 11, -3, 3));
  CHECK(c.max_partial[1] == 0.0);
  CHECK(c.max_partial[2] == 0.0);

  Mat sigma(2, 2);
  sigma << 1.0, -0.2, -0.2, 0.7;
  const SteinSolution th(make_tanh_product(vec({0.8, 1.1}), vec({0.1, -0.3})), sigma);
  const auto t = derivative_bound_check(th, tensor_grid(2, 21, -3, 3));
  CHECK(t.margin[1] >= -1e-6);
  CHECK(t.margin[2] >= -1e-6);
}

TEST_CASE("univariate solution bounds") {
  // Univariate solution of A' - wA = h - Phi(h); for h(w) = w it is A = -1.
  const auto id = make_affine(vec({1.0}));
  CHECK(univariate_bound_check(id, {-1.0, -0.5, 0.0, 0.5, 1.0}).margin_A >= 0.0);
  std::vector<double> grid;
  for (int i = 0; i <= 120; ++i) grid.push_back(-6.0 + 0.1 * i);
  const auto lin = univariate_bound_check(id, grid);
  CHECK(lin.sup_A == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(lin.passed());
  const auto cst = univariate_bound_check(make_affine(Vec::Zero(1), 1.0), grid);
  CHECK(cst.sup_A == 0.0);
  CHECK(cst.passed());
  const auto clip = univariate_bound_check(make_soft_clip(1.0, 4.0), grid);
  CHECK(clip.margin_A > 0.0);
  CHECK(clip.margin_A1 > 0.0);
  CHECK(clip.margin_A2 > 0.0);
  CHECK_THROWS_AS(univariate_bound_check(make_affine(vec({2.0})), grid), DomainError);
}

TEST_CASE("G_h evaluations") {
  Rng rng(2);
  const auto bump = make_gaussian_bump(vec({0.1, 0.2}), 1.0);
  const Mat b = Mat::Identity(2, 2) * 1.3;
  const auto quad = make_quadratic(Mat::Identity(2, 2), Vec::Zero(2));
  for (int trial = 0; trial < 10; ++trial) {
    GhParams p{rng.uniform(), 0.0, vec({rng.normal(), rng.normal()})};
    const Vec x = vec({rng.normal(), rng.normal()}), y = vec({rng.normal(), rng.normal()});
    CHECK(g_h_evaluate(*bump, b, p, x, y).norm() == 0.0);
    p.t = rng.uniform();
    CHECK(g_h_evaluate(*quad, b, p, x, y).norm() <= 1e-15);
  }
  const Cubic cubic;
  const GhParams p{1.0, 0.4, vec({0.0})};
  const Mat G = g_h_evaluate(cubic, Mat::Identity(1, 1), p, vec({0.7}), vec({1.5}));
  CHECK(G(0, 0) == doctest::Approx(0.4 * 1.5).epsilon(1e-14));
  CHECK_THROWS(g_h_evaluate(cubic, Mat::Zero(1, 1), p, vec({0.7}), vec({1.5})));
}

TEST_CASE("mollifier normalization") {
  for (std::size_t d = 1; d <= 3; ++d) {
    const MollifierSmoother m(d, 0.25, 1);
    CHECK(std::abs(m.mass() - 1.0) <= 1e-8);
    CHECK(m.c() > 0.0);
    CHECK(std::isfinite(m.c()));
    CHECK(1.0 / m.c() >= m.inverse_c_lower_bound());
  }
  CHECK_THROWS_AS(MollifierSmoother(2, 1.0), DomainError);
  CHECK_THROWS_AS(MollifierSmoother(4, 0.5), DomainError);
}

TEST_CASE("mollify keeps constants and linear functions") {
  const std::vector<std::vector<double>> probes{{0.0, 0.0, 0.0, 0.0}, {0.3, -0.2, 1.0, 0.5}};
  const auto c = mollify([](const double*) { return 2.5; }, 2, 0.3, 2, probes);
  CHECK(c.error_estimate <= 1e-13);
  const auto l = mollify([](const double* x) { return 0.3 * x[0] - 1.2 * x[1] + x[3]; }, 2, 0.3, 2, probes);
  CHECK(l.error_estimate <= 1e-13);
}

TEST_CASE("mollify |x| within eps") {
  std::vector<std::vector<double>> probes;
  for (int i = -100; i <= 100; ++i) probes.push_back({i / 200.0});
  const auto m = mollify([](const double* x) { return std::abs(x[0]); }, 1, 0.1, 1, probes);
  CHECK(m.error_estimate <= 0.1);
  CHECK(m.error_estimate > 0.0);
}

TEST_CASE("mollifier smoothing error on the log-Lipschitz class") {
  double worst = 0.0;
  for (int k = 3; k <= 9; ++k) {
    const double eps = std::ldexp(1.0, -k);
    const MollifierSmoother m(1, eps, 2, {32, 8, 2});
    const std::vector<std::vector<double>> probes{{0.0, 0.0}, {0.3, 0.3}};
    const auto f = mollify([](const double* x) { return log_lipschitz(std::hypot(x[0], x[1]) / std::sqrt(2.0)); }, m,
                           probes);
    worst = std::max(worst, f.error_estimate / (eps * (1.0 + std::log(1.0 / eps))));
  }
  CHECK(worst < 2.0);
}

}  // TEST_SUITE
