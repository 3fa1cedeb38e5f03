#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "steinmc/errors.hpp"
#include "steinmc/harness.hpp"

using namespace steinmc;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
  bool deterministic = false;
  bool no_cache = false;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  if (g.out) cfg.out = *g.out;
  if (g.deterministic) cfg.deterministic = true;
  // A deterministic run recomputes everything so the outputs never depend on a stale cache.
  if (g.no_cache || cfg.deterministic) cfg.cache = false;
  return cfg;
}

void print_fit(const RateFit& f) {
  std::printf("fit %s exponent %.4f +- %.4f (r2 %.3f)\n", model_name(f.model).c_str(), f.exponent, f.halfwidth, f.r2);
}

int cmd_rates(const ExperimentConfig& cfg) {
  const RatesResult r = run_rates(cfg);
  for (std::size_t i = 0; i < r.distances.size(); ++i)
    std::printf("N=%zu distance %.6g (lambda_min %.6g)\n", r.ns[i], r.distances[i].value, r.lambda_min[i]);
  print_fit(r.fit);
  if (r.noise_floor > 0) std::printf("noise floor %.6g%s\n", r.noise_floor, r.floor_ok ? "" : " (NOT below signal)");
  std::printf("wrote %s\n", r.csv_path.c_str());
  return 0;
}

int cmd_decompose(const ExperimentConfig& cfg) {
  const DecomposeResult r = run_decompose(cfg);
  for (int i = 0; i < 7; ++i) std::printf("E%d % .10e (se %.3e)\n", i + 1, r.ledger.E[i], r.ledger.se[i]);
  std::printf("LHS % .10e\nresidual % .3e tolerance %.3e %s\n", r.ledger.lhs, r.ledger.residual, r.tolerance,
              r.passed ? "PASS" : "FAIL");
  return r.passed ? 0 : 1;
}

int cmd_stein(const ExperimentConfig& cfg) {
  const SteinCheckResult r = run_stein_check(cfg);
  for (const auto& row : r.rows)
    std::printf("%-16s sigma#%zu residual %.3e (tol %.0e) margins %.3e %.3e %s\n", row.h.c_str(), row.matrix,
                row.max_residual, row.tolerance, row.margin1, row.margin2, row.passed ? "PASS" : "FAIL");
  return r.passed ? 0 : 1;
}

int cmd_quenched(const ExperimentConfig& cfg) {
  const QuenchedResult r = run_quenched(cfg);
  for (std::size_t i = 0; i < r.fits.size(); ++i) {
    std::printf("replica %zu: lambda growth %.3f, ", i, r.lambda_growth[i]);
    print_fit(r.fits[i]);
  }
  std::printf("wrote %s\n", r.csv_path.c_str());
  return 0;
}

int cmd_qds(const ExperimentConfig& cfg) {
  const QdsResult r = run_qds(cfg);
  for (std::size_t i = 0; i < r.ns.size(); ++i)
    std::printf("n=%zu lambda_min(t0) %.6g distance(t=1) %.6g\n", r.ns[i], r.lambda_t0[i], r.distances[i].value);
  for (double q : r.lambda_ratios) std::printf("lambda ratio %.4f\n", q);
  print_fit(r.fit);
  return 0;
}

int cmd_simulate(const ExperimentConfig& cfg) {
  const SimulateResult r = simulate(cfg);
  std::printf("%zu ensembles, wrote %s\n", r.sums.size(), r.csv_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo normal-approximation experiments for time-dependent dynamical systems"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--threads", g.threads, "worker threads (0: STEINMC_THREADS or hardware)");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--deterministic", g.deterministic, "bypass the cache; outputs are byte-reproducible");
  app.add_flag("--no-cache", g.no_cache, "do not read or write the ensemble cache");

  int (*run)(const ExperimentConfig&) = nullptr;
  auto sub = [&](const char* name, const char* help, int (*fn)(const ExperimentConfig&)) {
    app.add_subcommand(name, help)->fallthrough()->callback([&run, fn] { run = fn; });
  };
  sub("simulate", "sample Birkhoff sums and write moments", cmd_simulate);
  sub("rates", "distance to the normal law against N, with a power-law fit", cmd_rates);
  sub("decompose", "seven-term decomposition of the Stein expectation", cmd_decompose);
  sub("stein-check", "Stein equation residuals and derivative bounds", cmd_stein);
  sub("quenched", "replica-wise quenched rates for random compositions", cmd_quenched);
  sub("qds", "quasistatic variance growth and rates", cmd_qds);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return run(resolve(g));
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const UnsupportedError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 1;
  }
}
