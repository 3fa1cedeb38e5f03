#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "steinmc/errors.hpp"
#include "steinmc/linalg.hpp"
#include "steinmc/rng.hpp"
#include "steinmc/stats.hpp"
#include "steinmc/sunklodas.hpp"

using namespace steinmc;

namespace {

Mat random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat a(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) a(i, j) = rng.normal();
  return a;
}

std::vector<double> normals(std::size_t M, Rng& rng) {
  std::vector<double> x(M);
  for (auto& v : x) v = rng.normal();
  return x;
}

}  // namespace

TEST_SUITE("stats") {

TEST_CASE("matrix square roots") {
  CHECK((matrix_sqrt(Mat::Identity(3, 3)).b - Mat::Identity(3, 3)).norm() <= 1e-15);
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 4;
  d(1, 1) = 9;
  const auto r = matrix_sqrt(d);
  CHECK(r.b(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(r.b(1, 1) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(r.provenance == NormalizationMatrix::Provenance::SelfNorming);
  CHECK(r.condition == doctest::Approx(1.5));
  CHECK_THROWS_AS(matrix_sqrt(Mat::Zero(2, 2)), NumericError);

  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + trial % 5);
    const Mat a = random_matrix(n, n, rng);
    const Mat sigma = a.transpose() * a + Mat::Identity(n, n);
    const auto s = matrix_sqrt(sigma);
    CHECK(spectral_norm(s.b * s.b - sigma) <= 1e-10);
    CHECK(spectral_norm(s.b * s.b_inv - Mat::Identity(n, n)) <= 1e-10);
  }
}

TEST_CASE("spectral norm inequalities") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + trial % 4);
    const Mat A = random_matrix(n, n, rng), B = random_matrix(n, n, rng);
    const double a = spectral_norm(A), tol = 1e-12 * (1.0 + a);
    CHECK(spectral_norm(A * B) <= a * spectral_norm(B) + 1e-12 * (1.0 + a * spectral_norm(B)));
    CHECK(A.cwiseAbs().maxCoeff() <= a + tol);
    CHECK(std::abs(A.trace()) <= static_cast<double>(n) * a + tol);
    CHECK(a <= std::sqrt((A.transpose() * A).trace()) + tol);
    CHECK(spectral_norm(A + B) <= a + spectral_norm(B) + tol);
  }
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 2;
  d(1, 1) = 3;
  CHECK(spectral_norm(d) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("empirical covariance") {
  Rng rng(3);
  const std::size_t S = 40000, N = 16;
  std::vector<double> raw(S * N);
  for (auto& v : raw) v = (rng.bits() & 1u) ? 1.0 : -1.0;
  const EnsembleMatrix e(S, N, 1, raw);
  const auto c = empirical_covariance(e);
  CHECK(std::abs(c.cov(0, 0) - N) <= 4.0 * N * std::sqrt(2.0 / S));

  std::vector<double> dup(S * N * 2);
  for (std::size_t k = 0; k < S * N; ++k) dup[2 * k] = dup[2 * k + 1] = raw[k];
  const auto cd = empirical_covariance(EnsembleMatrix(S, N, 2, dup));
  CHECK(cd.degenerate);
  CHECK(cd.lambda_min <= 1e-8);
}

TEST_CASE("build_ensemble") {
  const auto dbl = MapSequence::sequential(MapFamily::lsv(), std::vector<double>(9, 0.0), 0.25);
  CHECK(build_ensemble(dbl, Observable::constant(0.7), 4, 500, nullptr, 1).all_zero());
  CHECK_THROWS_AS(build_ensemble(dbl, Observable::identity(), 4, 1, nullptr, 1), DomainError);

  const std::size_t S = 100000;
  const auto a = build_ensemble(dbl, Observable::identity(), 8, S, nullptr, 9);
  const auto b = build_ensemble(dbl, Observable::identity(), 8, S, nullptr, 9, 3);
  CHECK(a.values() == b.values());

  // means before centering: differences of prefix sums
  const auto sums = sum_ensembles(dbl, Observable::identity(), {{1, 2, 3, 4, 5, 6, 7, 8}, {1.0}}, S, nullptr, 9);
  double prev = 0.0;
  for (const auto& s : sums) {
    const double m = s.mean(0) - prev;
    prev = s.mean(0);
    CHECK(std::abs(m - 0.5) <= 3.0 * std::sqrt(1.0 / 12.0 / S));
  }
}

TEST_CASE("self-norming gives identity covariance") {
  const auto seq = MapSequence::random(MapFamily::slope_shift(), ParameterDriver::iid(0.0, 1.0, 5), 0.25);
  const std::size_t S = 50000;
  const auto f = Observable::from_components({"id", "cos"});
  const auto sums = sum_ensembles(seq, f, {{64}, {1.0}}, S, nullptr, 2);
  const auto nb = matrix_sqrt(sums[0].covariance());
  const auto W = sums[0].normalized(nb.b_inv);
  Mat c = Mat::Zero(2, 2);
  for (std::size_t s = 0; s < S; ++s)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) c(a, b) += W[2 * s + a] * W[2 * s + b] / S;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) CHECK(std::abs(c(a, b) - (a == b ? 1.0 : 0.0)) <= 3.0 / std::sqrt(double(S)));
}

TEST_CASE("sum ensembles are thread-count independent and prefix consistent") {
  const auto seq = MapSequence::random(MapFamily::lsv(), ParameterDriver::iid(0.0, 0.25, 8), 0.25);
  const auto f = Observable::identity();
  const auto one = sum_ensembles(seq, f, {{10, 40}, {1.0}}, 3000, nullptr, 4, 1);
  const auto four = sum_ensembles(seq, f, {{10, 40}, {1.0}}, 3000, nullptr, 4, 4);
  CHECK(one[1].values == four[1].values);
  const auto alone = sum_ensembles(seq, f, {{40}, {1.0}}, 3000, nullptr, 4, 1);
  CHECK(alone[0].values == one[1].values);
}

TEST_CASE("quasistatic sums at fractional times") {
  const std::size_t n = 20;
  const auto seq = MapSequence::quasistatic(MapFamily::lsv(), Curve::linear(0.05, 0.15), n, 0.25);
  const auto f = Observable::identity();
  const auto s = sum_ensembles(seq, f, {{n}, {0.33, 1.0}}, 200, nullptr, 3);
  REQUIRE(s.size() == 2);
  CHECK(s[0].t == 0.33);
  // 6.6 steps of an observable with values in [0,1]
  CHECK(s[0].mean(0) > 0.0);
  CHECK(s[0].mean(0) < 6.6);
  CHECK(s[1].mean(0) > s[0].mean(0));
}

TEST_CASE("normal quantiles") {
  for (double p : {1e-12, 1e-6, 0.001, 0.02425, 0.1, 0.3, 0.5, 0.77, 0.97575, 0.999, 1 - 1e-9}) {
    const double x = normal_quantile(p);
    CHECK(0.5 * std::erfc(-x / std::sqrt(2.0)) == doctest::Approx(p).epsilon(1e-9));
  }
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
}

TEST_CASE("wasserstein1_1d") {
  Rng rng(4);
  const auto x = normals(500, rng);
  CHECK(wasserstein1_1d(x, x).value == 0.0);
  CHECK(wasserstein1_1d(std::vector<double>(200, 0.0), std::vector<double>(200, -1.75)).value == 1.75);
  CHECK_THROWS(wasserstein1_1d(x, std::vector<double>(499, 0.0)));
  CHECK_THROWS_AS(wasserstein1_1d(std::vector<double>(99, 0.0)), DomainError);
  const auto big = wasserstein1_1d(normals(1000000, rng));
  CHECK(big.value <= 0.005);
  CHECK(big.value >= 0.0);
}

TEST_CASE("two-sample wasserstein is a metric") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t M = 100 + rng.bits() % 50;
    auto a = normals(M, rng), b = normals(M, rng), c = normals(M, rng);
    for (auto& v : b) v = 2.0 * v + 0.3;
    const double ab = wasserstein1_1d(a, b).value, ba = wasserstein1_1d(b, a).value;
    const double bc = wasserstein1_1d(b, c).value, ac = wasserstein1_1d(a, c).value;
    CHECK(ab == ba);
    CHECK(ac <= ab + bc);
  }
}

TEST_CASE("scale_distance") {
  DistanceReport r;
  r.value = 0.3;
  r.standard_error = 0.01;
  CHECK(scale_distance(r, 1.0).value == 0.3);
  CHECK(scale_distance(r, 2.0).value == 0.6);
  CHECK_THROWS_AS(scale_distance(r, 0.0), DomainError);
  r.metric = DistanceReport::Metric::SmoothMetric;
  CHECK_THROWS_AS(scale_distance(r, 2.0), UnsupportedError);

  Rng rng(6);
  auto a = normals(1000, rng), b = normals(1000, rng);
  const double base = wasserstein1_1d(a, b).value;
  for (auto& v : a) v *= 3.0;
  for (auto& v : b) v *= 3.0;
  CHECK(std::abs(wasserstein1_1d(a, b).value - 3.0 * base) <= 1e-12 * base);
}

TEST_CASE("smooth metric") {
  Rng rng(7);
  const std::size_t M = 200000;
  Mat sigma(2, 2);
  sigma << 1.0, 0.3, 0.3, 0.6;
  const Mat L = cholesky_lower(sigma);
  std::vector<double> W(2 * M);
  for (std::size_t s = 0; s < M; ++s) {
    const double z0 = rng.normal(), z1 = rng.normal();
    W[2 * s] = L(0, 0) * z0;
    W[2 * s + 1] = L(1, 0) * z0 + L(1, 1) * z1;
  }
  const auto same = smooth_metric_distance(W, 2, sigma, builtin_family(2));
  CHECK(same.value <= 3.0 * same.standard_error);

  const std::vector<TestFunctionPtr> constants{make_affine(Vec::Zero(2), 1.0), make_affine(Vec::Zero(2), -4.0)};
  CHECK(smooth_metric_distance(W, 2, sigma, constants).value <= 1e-15);

  auto shifted = W;
  for (std::size_t s = 0; s < M; ++s) shifted[2 * s] += 0.3;
  const std::vector<TestFunctionPtr> tanh1{make_tanh_product(Vec::Ones(1), Vec::Zero(1))};
  std::vector<double> first(M);
  for (std::size_t s = 0; s < M; ++s) first[s] = shifted[2 * s];
  const auto gap = smooth_metric_distance(first, 1, Mat::Identity(1, 1) * sigma(0, 0), tanh1);
  CHECK(gap.value > 10.0 * gap.standard_error);
}

TEST_CASE("sliced wasserstein") {
  Rng rng(8);
  auto x = normals(5000, rng);
  for (auto& v : x) v *= 1.5;
  const auto s = sliced_wasserstein(x, 1, Mat::Identity(1, 1) * 2.25, 32, 3);
  std::vector<double> y(x);
  for (auto& v : y) v /= 1.5;
  CHECK(s.value == doctest::Approx(wasserstein1_1d(y).value).epsilon(1e-13));
  CHECK_THROWS(sliced_wasserstein(x, 1, Mat::Identity(1, 1), 16, 3));

  const std::size_t M = 100000;
  std::vector<double> W(2 * M);
  for (auto& v : W) v = rng.normal();
  Mat iso = Mat::Identity(2, 2), aniso = Mat::Identity(2, 2);
  aniso(1, 1) = 4.0;
  const double match = sliced_wasserstein(W, 2, iso, 64, 1).value;
  CHECK(match <= 0.01);
  const double m1 = sliced_wasserstein(W, 2, aniso, 64, 1).value;
  const double m2 = sliced_wasserstein(W, 2, aniso, 64, 2).value;
  CHECK(m1 > 10.0 * match);
  CHECK(std::abs(m1 - m2) <= 0.2 * m1);
}

TEST_CASE("sigma series") {
  const auto dbl = MapSequence::random(MapFamily::lsv(), ParameterDriver::constant(0.0, 1), 0.25);
  SigmaSeriesOptions opt{16, 4096, 32, 1};
  const auto c = sigma_series(dbl, Observable::constant(1.0), 4, 1, opt);
  CHECK(c.sigma.norm() == 0.0);
  const auto k0 = sigma_series(dbl, Observable::identity(), 0, 1, opt);
  REQUIRE(k0.lags.size() == 1);
  CHECK((k0.sigma - k0.lags[0]).norm() == 0.0);
  CHECK(k0.sigma(0, 0) == doctest::Approx(1.0 / 12.0).epsilon(0.05));
  opt.runs = 64;
  const auto full = sigma_series(dbl, Observable::identity(), 20, 1, opt);
  CHECK(full.sigma(0, 0) == doctest::Approx(0.25).epsilon(0.04));
  CHECK(full.tail_estimate < 1e-3);
}

TEST_CASE("rate fits") {
  std::vector<std::pair<double, double>> pure, flat, logged;
  for (int k = 8; k <= 14; ++k) {
    const double N = std::ldexp(1.0, k);
    pure.emplace_back(N, 1.0 / std::sqrt(N));
    flat.emplace_back(N, 0.2);
    logged.emplace_back(N, std::log(N) / std::sqrt(N));
  }
  const auto p = fit_rate(pure, RateFit::Model::PurePower);
  CHECK(p.exponent == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(p.r2 == doctest::Approx(1.0));
  CHECK(std::abs(fit_rate(flat, RateFit::Model::PurePower).exponent) <= 1e-12);
  const auto l = fit_rate(logged, RateFit::Model::PurePower);
  CHECK(l.exponent > -0.5);
  CHECK(l.exponent < -0.3);
  CHECK(fit_rate(logged, RateFit::Model::PowerTimesLog).exponent == doctest::Approx(-0.5).epsilon(1e-10));

  auto bad = pure;
  bad[2].second = 0.0;
  CHECK_THROWS(fit_rate(bad, RateFit::Model::PurePower));
  CHECK_THROWS(fit_rate({pure.begin(), pure.begin() + 3}, RateFit::Model::PurePower));
  CHECK_THROWS(fit_rate({{256, 1}, {300, 1}, {400, 1}, {500, 1}}, RateFit::Model::PurePower));

  // reproducible from the stored pairs
  std::vector<std::pair<double, double>> again;
  for (std::size_t i = 0; i < l.ns.size(); ++i) again.emplace_back(l.ns[i], l.distances[i]);
  CHECK(fit_rate(again, RateFit::Model::PurePower).exponent == l.exponent);
}

TEST_CASE("distance CSV schema") {
  std::ostringstream os;
  write_distance_csv_header(os, false);
  DistanceReport r;
  r.value = 0.125;
  r.samples = 1000;
  write_distance_csv_row(os, r, 256);
  CHECK(os.str() == "metric,N,S,value,stderr\nwasserstein1d,256,1000,0.125,0\n");
}

}  // TEST_SUITE
