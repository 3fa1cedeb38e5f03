#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "steinmc/dynamics.hpp"
#include "steinmc/stats.hpp"
#include "steinmc/stein.hpp"
#include "steinmc/sunklodas.hpp"

namespace steinmc {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kConfigVersion = 1;

using json = nlohmann::json;

struct SystemSpec {
  std::string family = "lsv";  // lsv | slope
  double base_slope = 2.0;
  std::string mode = "sequential";  // sequential | random | quasistatic
  std::string driver = "iid";       // iid | markov | constant
  double lo = 0.0, hi = 0.25;
  std::size_t states = 8;
  double stay = 0.5;
  std::uint64_t driver_seed = 11;
  std::vector<double> params;  // explicit sequential parameters; drawn from the driver when empty
  std::vector<double> curve_t{0.0, 1.0};
  std::vector<double> curve_values{0.2, 0.2};
  double eta = 1.0;
  double beta_star = 0.25;
};

struct DecomposeSpec {
  std::string source = "dynamics";  // dynamics | sign_enumeration
  std::size_t steps = 8;
  std::size_t samples = 20000;
  std::string test_function = "tanh_product";
  std::size_t hermite_order = 20;
  std::size_t time_nodes = 24;
  std::size_t u_order = 8;
  std::size_t u_panels = 1;
};

struct SteinCheckSpec {
  std::size_t dim = 1;
  std::string sigma = "identity";  // identity | random | explicit
  std::vector<double> sigma_entries;  // row-major, for explicit
  std::size_t matrices = 1;           // random matrices drawn
  std::size_t grid_points = 21;
  double grid_radius = 3.0;
  std::size_t hermite_order = 20;
  std::size_t time_nodes = 24;
};

struct QuenchedSpec {
  std::size_t replicas = 8;
  std::size_t lags = 64;
  std::size_t sigma_runs = 64;
  std::size_t sigma_samples = 4096;
  std::size_t burn_in = 256;
};

struct ExperimentConfig {
  std::string name = "experiment";
  SystemSpec system;
  std::vector<std::string> observable{"id"};
  std::vector<std::size_t> n_grid{256, 512, 1024, 2048, 4096, 8192};
  std::size_t samples = 200000;
  std::vector<double> times{1.0};
  double t0 = 0.5;
  std::string metric = "auto";  // auto | wasserstein1d | sliced | smooth
  std::size_t directions = 64;
  std::string normalization = "self";  // self | sqrt_n
  std::string fit_model = "pure_power";
  std::uint64_t seed = 1;
  DecomposeSpec decompose;
  SteinCheckSpec stein_check;
  QuenchedSpec quenched;

  // Run settings; they do not change results and are left out of the hash.
  std::size_t threads = 0;
  std::string out = "out";
  bool deterministic = false;
  bool cache = true;

  json to_json() const;
  // ConfigError on unknown keys, wrong types or out-of-range values.
  static ExperimentConfig from_json(const json& j);
  static ExperimentConfig load(const std::string& path);
  // JSON without the run settings.
  json result_json() const;
  // SHA-256 of result_json().dump().
  std::string hash() const;
  // Non-fatal findings, e.g. beta* >= 2/5 where the sequential theorem is silent.
  std::vector<std::string> warnings() const;
};

std::string sha256_hex(const std::string& data);
std::string file_sha256(const std::string& path);

MapSequence make_sequence(const SystemSpec& spec, std::size_t max_n);
Observable make_observable(const std::vector<std::string>& names);
TestFunctionPtr find_test_function(const std::string& name, std::size_t d);

struct RunManifest {
  std::string command;
  std::string config_hash;
  json config;
  std::string version = kVersion;
  double wall_seconds = 0.0;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> digests;  // file name -> sha256
  std::vector<std::string> warnings;

  json to_json() const;
  // Writes <out>/manifest_<command>.json after digesting the listed files.
  void write(const std::string& out_dir, const std::vector<std::string>& files);
};

struct RatesResult {
  std::vector<std::size_t> ns;  // sorted, duplicates removed
  std::vector<DistanceReport> distances;  // one per N, metric used for the fit
  std::vector<DistanceReport> secondary;  // smooth metric for d > 1
  std::vector<double> lambda_min;
  RateFit fit;
  double noise_floor = 0.0;
  bool floor_ok = true;  // floor below the smallest measured distance
  std::string csv_path;
};

// Ensembles over the N grid, normalization, distance to normal and the rate
// fit. NumericError naming the offending N when a covariance is degenerate.
RatesResult run_rates(const ExperimentConfig& cfg);

struct DecomposeResult {
  DecompositionLedger ledger;
  double tolerance = 0.0;
  bool passed = true;
  std::string csv_path;
};

DecomposeResult run_decompose(const ExperimentConfig& cfg);

struct SteinCheckRow {
  std::string h;
  std::size_t matrix = 0;
  double max_residual = 0.0;
  double tolerance = 0.0;
  double margin1 = 0.0, margin2 = 0.0;
  bool passed = true;
};

struct SteinCheckResult {
  std::vector<SteinCheckRow> rows;
  bool passed = true;
  std::string csv_path;
};

SteinCheckResult run_stein_check(const ExperimentConfig& cfg);

struct QuenchedResult {
  SigmaSeries sigma;
  std::vector<RateFit> fits;  // one per replica
  std::vector<std::vector<DistanceReport>> distances;
  std::vector<double> lambda_growth;  // fitted exponent of lambda_min(Cov S_N) in N, per replica
  bool degenerate_growth = false;     // some replica grows sub-linearly (exponent < 0.5)
  std::string csv_path;
};

QuenchedResult run_quenched(const ExperimentConfig& cfg);

struct QdsResult {
  std::vector<std::size_t> ns;
  std::vector<double> lambda_t0;        // lambda_min Cov(S_n(t0))
  std::vector<double> lambda_ratios;    // lambda(n_{j+1}) / lambda(n_j)
  std::vector<DistanceReport> distances;  // W_n(1)
  RateFit fit;
  std::string csv_path;
};

QdsResult run_qds(const ExperimentConfig& cfg);

struct SimulateResult {
  std::vector<SumEnsemble> sums;
  std::string csv_path;
};

// Sums over the N grid and times; writes per-(N, t) means, covariances and
// least eigenvalues.
SimulateResult simulate(const ExperimentConfig& cfg);

// Sum ensembles through the on-disk cache under <out>/cache when enabled.
std::vector<SumEnsemble> cached_sums(const ExperimentConfig& cfg, const MapSequence& seq, const Observable& f,
                                     const SumRequest& req, std::uint64_t seed, const std::string& tag);

}  // namespace steinmc
