// Acceptance experiments. One PASS/FAIL line per criterion; exits 1 when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "steinmc/harness.hpp"
#include "steinmc/mollifier.hpp"
#include "steinmc/rng.hpp"
#include "steinmc/stats.hpp"
#include "steinmc/stein.hpp"
#include "steinmc/sunklodas.hpp"
#include "steinmc/transfer.hpp"

using namespace steinmc;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

// Runs one criterion; `limit` (seconds) is part of the criterion when > 0.
void criterion(int id, const char* title, double limit, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  bool pass = o.pass;
  char timing[96];
  if (limit > 0.0) {
    std::snprintf(timing, sizeof timing, "%.1f s, limit %.0f s", secs, limit);
    pass = pass && secs <= limit;
  } else {
    std::snprintf(timing, sizeof timing, "%.1f s", secs);
  }
  if (!pass) ++failures;
  std::printf("%s %2d %s: %s (%s)\n", pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), timing);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Mat random_spd(std::size_t d, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(d);
  Mat a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = rng.normal();
  return a.transpose() * a / static_cast<double>(d) + 0.5 * Mat::Identity(n, n);
}

bool is_closed_form(const std::string& name) { return name == "affine" || name == "quadratic"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STEINMC_CLI) + " " + args + " > /dev/null";
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

// Exponent column of rates_fit.csv.
double fitted_exponent(const fs::path& dir) {
  std::ifstream in(dir / "rates_fit.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::stringstream ss(line);
  std::string model, exponent;
  std::getline(ss, model, ',');
  std::getline(ss, exponent, ',');
  return std::stod(exponent);
}

const char* kSequentialLsv = R"({
  "version": 1, "name": "sequential_lsv",
  "system": {"family": "lsv", "mode": "sequential", "driver": "iid", "lo": 0.0, "hi": 0.25, "beta_star": 0.25},
  "observable": ["id"], "n_grid": [256, 512, 1024, 2048, 4096, 8192], "samples": 200000,
  "normalization": "self", "fit_model": "pure_power", "seed": 1})";

// The noise floor of the W1 estimator at S = 2e5 (about 2.5e-3) sits above
// the distances at large N for this family, so S is raised until it does not.
const char* kRandomSlope = R"({
  "version": 1, "name": "random_slope",
  "system": {"family": "slope", "mode": "random", "driver": "iid", "lo": 0.0, "hi": 1.0},
  "observable": ["id"], "n_grid": [256, 512, 1024, 2048, 4096, 8192], "samples": 4000000,
  "normalization": "self", "fit_model": "pure_power", "seed": 1})";

const char* kQds = R"({
  "version": 1, "name": "qds_constant_curve",
  "system": {"family": "lsv", "mode": "quasistatic", "curve_t": [0.0, 1.0], "curve_values": [0.2, 0.2],
             "beta_star": 0.25},
  "observable": ["id"], "n_grid": [512, 1024, 2048, 4096], "samples": 200000, "t0": 0.5, "seed": 1})";

}  // namespace

int main() {
  const fs::path work = fs::absolute("acceptance_out");
  fs::remove_all(work);
  fs::create_directories(work);

  criterion(1, "Sunklodas identity on exhaustive finite spaces", 60.0, [] {
    Rng rng(20);
    double worst = 0.0;
    const int trials = 100;
    for (int trial = 0; trial < trials; ++trial) {
      const std::size_t d = 1 + rng.bits() % 3, N = 1 + rng.bits() % 8, K = d + 2 + rng.bits() % (31 - d);
      std::vector<double> raw(K * N * d), w(K);
      for (auto& v : raw) v = rng.normal();
      for (auto& x : w) x = 0.2 + rng.uniform();
      EnsembleMatrix e(K, N, d, std::move(raw), std::move(w), true);
      e.set_normalization(matrix_sqrt(e.sum_covariance()).b);
      const auto family = builtin_family(d);
      const SteinQuadrature q{d == 1 ? 20u : d == 2 ? 8u : 4u, 12};
      const auto L = decompose(e, family[trial % family.size()], q, {8, 2});
      worst = std::max(worst, std::abs(L.residual));
    }
    return Outcome{worst <= 1e-9, fmt("max |sum E - LHS| = %.2e over %d spaces, tolerance 1e-9", worst, trials)};
  });

  // Stein checks go through the harness: random Sigma has eigenvalues in [0.5, 1.5].
  auto stein_check = [&](std::size_t d, std::size_t matrices, std::size_t points, std::size_t order) {
    ExperimentConfig cfg;
    cfg.seed = 2;
    cfg.stein_check.dim = d;
    cfg.stein_check.sigma = "random";
    cfg.stein_check.matrices = matrices;
    cfg.stein_check.grid_points = points;
    cfg.stein_check.grid_radius = 3.0;
    cfg.stein_check.hermite_order = order;
    cfg.stein_check.time_nodes = 12;
    cfg.out = (work / ("stein_d" + std::to_string(d) + "_" + std::to_string(points))).string();
    return run_stein_check(cfg);
  };

  criterion(2, "Stein residual", 120.0, [&] {
    double worst_closed = 0.0, worst_other = 0.0;
    const std::size_t points[4] = {0, 201, 21, 7}, order[4] = {0, 20, 20, 28};
    for (std::size_t d = 1; d <= 3; ++d)
      for (const auto& row : stein_check(d, 5, points[d], order[d]).rows) {
        double& slot = is_closed_form(row.h) ? worst_closed : worst_other;
        slot = std::max(slot, row.max_residual);
      }
    return Outcome{worst_closed <= 1e-10 && worst_other <= 1e-4,
                   fmt("closed forms %.2e (tol 1e-10), others %.2e (tol 1e-4)", worst_closed, worst_other)};
  });

  criterion(3, "Stein derivative bounds", 0.0, [&] {
    double worst = INFINITY;
    for (std::size_t d = 1; d <= 3; ++d)
      for (const auto& row : stein_check(d, 1, 21, d == 3 ? 10 : 20).rows)
        worst = std::min({worst, row.margin1, row.margin2});
    return Outcome{worst >= -1e-6, fmt("min margin over k = 1, 2 on 21^d grids is %.3e, tolerance -1e-6", worst)};
  });

  criterion(4, "univariate solution bounds", 0.0, [] {
    std::vector<double> grid;
    for (int i = 0; i <= 240; ++i) grid.push_back(-6.0 + 0.05 * i);
    double worst = INFINITY;
    const auto family = lipschitz_family_1d();
    for (const auto& h : family) {
      const auto r = univariate_bound_check(h, grid);
      worst = std::min({worst, r.margin_A, r.margin_A1, r.margin_A2});
    }
    return Outcome{worst >= -1e-6 && family.size() == 10,
                   fmt("min margin %.3e over %zu functions, tolerance -1e-6", worst, family.size())};
  });

  criterion(5, "doubling map autocovariance", 60.0, [] {
    const auto dbl = MapSequence::sequential(MapFamily::lsv(), std::vector<double>(9, 0.0), 0.25);
    const auto id = Observable::identity();
    const auto mu0 = DensityVector::uniform(1024);
    double worst = 0.0;
    for (std::size_t k = 1; k <= 8; ++k) {
      const auto e = correlation_estimate(dbl, id, id, 0, k, mu0, 1000000, 500 + k, 0, 0, 0);
      const double z = std::abs(e.value - std::ldexp(1.0, -static_cast<int>(k)) / 12.0) / e.standard_error;
      worst = std::max(worst, z);
    }
    return Outcome{worst <= 3.0, fmt("max |error| / se = %.2f for k = 1..8 at S = 1e6", worst)};
  });

  criterion(6, "Ulam invariant densities", 0.0, [] {
    const auto h0 = invariant_density(build_ulam(IntervalMap::lsv(0.0), 1024));
    double dev = 0.0;
    for (double v : h0.values()) dev = std::max(dev, std::abs(v - 1.0));
    const auto cone = cone_check(invariant_density(build_ulam(IntervalMap::lsv(0.25), 4096)), 0.25);
    return Outcome{dev <= 1e-10 && cone.passed(),
                   fmt("alpha 0: max |h - 1| = %.2e; alpha 0.25: cone %s", dev, cone.passed() ? "passes" : "fails")};
  });

  // Criteria 7 and 12 share the two CLI runs.
  const fs::path cfg7 = work / "sequential_lsv.json";
  std::ofstream(cfg7) << kSequentialLsv;
  const fs::path run_a = work / "seq_a", run_b = work / "seq_b";
  int rc_a = -1;

  criterion(7, "sequential intermittent rate", 900.0, [&] {
    rc_a = run_cli("rates --deterministic --config " + cfg7.string() + " --out " + run_a.string());
    if (rc_a != 0) return Outcome{false, fmt("CLI exit status %d", rc_a)};
    const double e = fitted_exponent(run_a);
    return Outcome{e >= -0.65 && e <= -0.35, fmt("exponent %.3f, window [-0.65, -0.35]", e)};
  });

  criterion(8, "random piecewise-expanding rate", 600.0, [&] {
    auto cfg = ExperimentConfig::from_json(json::parse(kRandomSlope));
    cfg.out = (work / "slope").string();
    cfg.cache = false;
    const auto r = run_rates(cfg);
    const double e = r.fit.exponent;
    return Outcome{e >= -0.65 && e <= -0.35,
                   fmt("exponent %.3f (r2 %.3f, floor %.2e %s), window [-0.65, -0.35]", e, r.fit.r2, r.noise_floor,
                       r.floor_ok ? "below signal" : "ABOVE signal")};
  });

  criterion(9, "quasistatic pipeline", 0.0, [&] {
    auto cfg = ExperimentConfig::from_json(json::parse(kQds));
    cfg.out = (work / "qds").string();
    cfg.cache = false;
    const auto r = run_qds(cfg);
    bool ok = !r.lambda_ratios.empty();
    std::string ratios;
    for (double q : r.lambda_ratios) {
      ok = ok && q >= 1.6 && q <= 2.4;
      ratios += fmt("%s%.3f", ratios.empty() ? "" : " ", q);
    }
    const double e = r.fit.exponent;
    ok = ok && e >= -0.65 && e <= -0.3;
    return Outcome{ok, fmt("lambda ratios %s in [1.6, 2.4]; exponent %.3f in [-0.65, -0.3]", ratios.c_str(), e)};
  });

  criterion(10, "mollifier", 0.0, [] {
    double mass_err = 0.0;
    for (std::size_t d = 1; d <= 3; ++d) mass_err = std::max(mass_err, std::abs(MollifierSmoother(d, 0.25, 1).mass() - 1.0));
    auto loglip = [](double r) { return r <= 0.0 ? 0.0 : r < 1.0 ? r * (1.0 + std::log(1.0 / r)) : 1.0; };
    double lo = INFINITY, hi = 0.0;
    for (int k = 3; k <= 9; ++k) {
      const double eps = std::ldexp(1.0, -k);
      const MollifierSmoother m(1, eps, 2, {32, 8, 2});
      const std::vector<std::vector<double>> probes{{0.0, 0.0}, {0.3, 0.3}};
      const auto f = mollify([&](const double* x) { return loglip(std::hypot(x[0], x[1]) / std::sqrt(2.0)); }, m,
                             probes);
      const double ratio = f.error_estimate / (eps * (1.0 + std::log(1.0 / eps)));
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
    }
    return Outcome{mass_err <= 1e-8 && hi < 2.0,
                   fmt("max |mass - 1| = %.2e; smoothing ratio in [%.3f, %.3f], bound 2", mass_err, lo, hi)};
  });

  criterion(11, "estimator exactness", 0.0, [] {
    Rng rng(23);
    std::vector<double> a(4096), b(4096);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = 0.5 * rng.normal() + 0.1;
    const auto base = wasserstein1_1d(a, b);
    double homog = 0.0;
    for (double s : {0.25, 3.0, 17.5}) {
      const double direct = scale_distance(base, s).value;
      homog = std::max(homog, std::abs(direct - s * base.value) / (s * base.value));
      auto as = a, bs = b;
      for (auto& v : as) v *= s;
      for (auto& v : bs) v *= s;
      homog = std::max(homog, std::abs(wasserstein1_1d(as, bs).value - s * base.value) / (s * base.value));
    }
    const double self = wasserstein1_1d(a, a).value;
    double roundtrip = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t d = 1 + trial % 5;
      const Mat sigma = random_spd(d, rng);
      const auto s = matrix_sqrt(sigma);
      roundtrip = std::max(roundtrip, spectral_norm(s.b * s.b - sigma));
    }
    return Outcome{homog <= 1e-12 && self == 0.0 && roundtrip <= 1e-10,
                   fmt("homogeneity %.1e, self-distance %g, sqrt round trip %.1e", homog, self, roundtrip)};
  });

  criterion(12, "deterministic reruns", 0.0, [&] {
    if (rc_a != 0) return Outcome{false, "first run did not complete"};
    const int rc = run_cli("rates --deterministic --config " + cfg7.string() + " --out " + run_b.string());
    if (rc != 0) return Outcome{false, fmt("CLI exit status %d", rc)};
    std::size_t files = 0, same = 0;
    for (const auto& entry : fs::directory_iterator(run_a)) {
      if (entry.path().extension() != ".csv") continue;
      ++files;
      if (slurp(entry.path()) == slurp(run_b / entry.path().filename())) ++same;
    }
    return Outcome{files > 0 && same == files, fmt("%zu of %zu CSV files byte-identical", same, files)};
  });

  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
