#include "steinmc/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "steinmc/csv.hpp"
#include "steinmc/errors.hpp"
#include "steinmc/parallel.hpp"
#include "steinmc/rng.hpp"

namespace steinmc {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

namespace {

// Reads one JSON object, rejecting unknown keys and mistyped values.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ConfigError(path(key) + " must be a nonnegative integer");
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      if (!v.is_array()) throw ConfigError(path(key) + " must be an array");
      for (const auto& e : v)
        if (!e.is_number_unsigned()) throw ConfigError(path(key) + " must hold nonnegative integers");
    }
    try {
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  Reader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, path(key));
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + path(item.key().c_str()));
  }

  std::string path(const char* key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  return std::any_of(options.begin(), options.end(), [&](const char* o) { return v == o; });
}

}  // namespace

json ExperimentConfig::result_json() const {
  json sys = {{"family", system.family},     {"base_slope", system.base_slope},
              {"mode", system.mode},         {"driver", system.driver},
              {"lo", system.lo},             {"hi", system.hi},
              {"states", system.states},     {"stay", system.stay},
              {"driver_seed", system.driver_seed}, {"params", system.params},
              {"curve_t", system.curve_t},   {"curve_values", system.curve_values},
              {"eta", system.eta},           {"beta_star", system.beta_star}};
  json dec = {{"source", decompose.source},           {"steps", decompose.steps},
              {"samples", decompose.samples},         {"test_function", decompose.test_function},
              {"hermite_order", decompose.hermite_order}, {"time_nodes", decompose.time_nodes},
              {"u_order", decompose.u_order},         {"u_panels", decompose.u_panels}};
  json sc = {{"dim", stein_check.dim},
             {"sigma", stein_check.sigma},
             {"sigma_entries", stein_check.sigma_entries},
             {"matrices", stein_check.matrices},
             {"grid_points", stein_check.grid_points},
             {"grid_radius", stein_check.grid_radius},
             {"hermite_order", stein_check.hermite_order},
             {"time_nodes", stein_check.time_nodes}};
  json qu = {{"replicas", quenched.replicas},
             {"lags", quenched.lags},
             {"sigma_runs", quenched.sigma_runs},
             {"sigma_samples", quenched.sigma_samples},
             {"burn_in", quenched.burn_in}};
  return json{{"version", kConfigVersion},
              {"name", name},
              {"system", sys},
              {"observable", observable},
              {"n_grid", n_grid},
              {"samples", samples},
              {"times", times},
              {"t0", t0},
              {"metric", metric},
              {"directions", directions},
              {"normalization", normalization},
              {"fit_model", fit_model},
              {"seed", seed},
              {"decompose", dec},
              {"stein_check", sc},
              {"quenched", qu}};
}

json ExperimentConfig::to_json() const {
  json j = result_json();
  j["run"] = {{"threads", threads}, {"out", out}, {"deterministic", deterministic}, {"cache", cache}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "config");
  int version = kConfigVersion;
  r.get("version", version);
  require(version == kConfigVersion, "unsupported config version " + std::to_string(version));
  r.get("name", c.name);
  {
    Reader s = r.child("system");
    SystemSpec& y = c.system;
    s.get("family", y.family);
    s.get("base_slope", y.base_slope);
    s.get("mode", y.mode);
    s.get("driver", y.driver);
    s.get("lo", y.lo);
    s.get("hi", y.hi);
    s.get("states", y.states);
    s.get("stay", y.stay);
    s.get("driver_seed", y.driver_seed);
    s.get("params", y.params);
    s.get("curve_t", y.curve_t);
    s.get("curve_values", y.curve_values);
    s.get("eta", y.eta);
    s.get("beta_star", y.beta_star);
    s.finish();
  }
  r.get("observable", c.observable);
  r.get("n_grid", c.n_grid);
  r.get("samples", c.samples);
  r.get("times", c.times);
  r.get("t0", c.t0);
  r.get("metric", c.metric);
  r.get("directions", c.directions);
  r.get("normalization", c.normalization);
  r.get("fit_model", c.fit_model);
  r.get("seed", c.seed);
  {
    Reader d = r.child("decompose");
    d.get("source", c.decompose.source);
    d.get("steps", c.decompose.steps);
    d.get("samples", c.decompose.samples);
    d.get("test_function", c.decompose.test_function);
    d.get("hermite_order", c.decompose.hermite_order);
    d.get("time_nodes", c.decompose.time_nodes);
    d.get("u_order", c.decompose.u_order);
    d.get("u_panels", c.decompose.u_panels);
    d.finish();
  }
  {
    Reader d = r.child("stein_check");
    d.get("dim", c.stein_check.dim);
    d.get("sigma", c.stein_check.sigma);
    d.get("sigma_entries", c.stein_check.sigma_entries);
    d.get("matrices", c.stein_check.matrices);
    d.get("grid_points", c.stein_check.grid_points);
    d.get("grid_radius", c.stein_check.grid_radius);
    d.get("hermite_order", c.stein_check.hermite_order);
    d.get("time_nodes", c.stein_check.time_nodes);
    d.finish();
  }
  {
    Reader d = r.child("quenched");
    d.get("replicas", c.quenched.replicas);
    d.get("lags", c.quenched.lags);
    d.get("sigma_runs", c.quenched.sigma_runs);
    d.get("sigma_samples", c.quenched.sigma_samples);
    d.get("burn_in", c.quenched.burn_in);
    d.finish();
  }
  {
    Reader d = r.child("run");
    d.get("threads", c.threads);
    d.get("out", c.out);
    d.get("deterministic", c.deterministic);
    d.get("cache", c.cache);
    d.finish();
  }
  r.finish();

  const SystemSpec& y = c.system;
  require(one_of(y.family, {"lsv", "slope"}), "system.family must be lsv or slope");
  require(one_of(y.mode, {"sequential", "random", "quasistatic"}),
          "system.mode must be sequential, random or quasistatic");
  require(one_of(y.driver, {"iid", "markov", "constant"}), "system.driver must be iid, markov or constant");
  require(y.lo <= y.hi, "system.lo must not exceed system.hi");
  require(y.stay >= 0.0 && y.stay < 1.0, "system.stay must lie in [0,1)");
  require(y.driver != "markov" || y.states >= 2, "a markov driver needs at least 2 states");
  require(y.eta > 0.0 && y.eta <= 1.0, "system.eta must lie in (0,1]");
  require(!c.n_grid.empty(), "n_grid must not be empty");
  for (std::size_t n : c.n_grid) require(n >= 1, "n_grid entries must be positive");
  require(c.samples >= 100, "samples must be at least 100");
  require(!c.times.empty(), "times must not be empty");
  for (double t : c.times) require(t > 0.0 && t <= 1.0, "times must lie in (0,1]");
  require(c.t0 > 0.0 && c.t0 <= 1.0, "t0 must lie in (0,1]");
  require(one_of(c.metric, {"auto", "wasserstein1d", "sliced", "smooth"}),
          "metric must be auto, wasserstein1d, sliced or smooth");
  require(c.directions >= 32, "directions must be at least 32");
  require(one_of(c.normalization, {"self", "sqrt_n"}), "normalization must be self or sqrt_n");
  require(one_of(c.fit_model, {"pure_power", "power_times_log"}), "fit_model must be pure_power or power_times_log");
  require(one_of(c.decompose.source, {"dynamics", "sign_enumeration"}),
          "decompose.source must be dynamics or sign_enumeration");
  require(c.decompose.steps >= 1, "decompose.steps must be positive");
  require(c.decompose.samples >= 100, "decompose.samples must be at least 100");
  require(c.decompose.hermite_order >= 1 && c.decompose.time_nodes >= 1, "decompose quadrature orders must be positive");
  require(c.decompose.u_order >= 1 && c.decompose.u_panels >= 1, "decompose u-quadrature must be nonempty");
  require(c.stein_check.dim >= 1 && c.stein_check.dim <= 3, "stein_check.dim must lie in 1..3");
  require(one_of(c.stein_check.sigma, {"identity", "random", "explicit"}),
          "stein_check.sigma must be identity, random or explicit");
  require(c.stein_check.sigma != "explicit" ||
              c.stein_check.sigma_entries.size() == c.stein_check.dim * c.stein_check.dim,
          "stein_check.sigma_entries must hold dim*dim values");
  require(c.stein_check.matrices >= 1, "stein_check.matrices must be positive");
  require(c.stein_check.grid_points >= 2, "stein_check.grid_points must be at least 2");
  require(c.stein_check.grid_radius > 0.0, "stein_check.grid_radius must be positive");
  require(c.stein_check.hermite_order >= 1 && c.stein_check.time_nodes >= 1,
          "stein_check quadrature orders must be positive");
  require(c.quenched.replicas >= 1, "quenched.replicas must be positive");
  require(c.quenched.sigma_runs >= 1 && c.quenched.sigma_samples >= 2, "quenched sigma estimation needs samples");
  try {
    const std::size_t max_n = *std::max_element(c.n_grid.begin(), c.n_grid.end());
    (void)make_sequence(c.system, std::max(max_n, c.decompose.steps));
    (void)make_observable(c.observable);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  return from_json(j);
}

std::string ExperimentConfig::hash() const { return sha256_hex(result_json().dump()); }

std::vector<std::string> ExperimentConfig::warnings() const {
  std::vector<std::string> w;
  if (system.family == "lsv" && system.beta_star >= 0.4)
    w.push_back("beta* >= 2/5: the sequential intermittent rate theorem gives no bound in this regime");
  if (system.family == "lsv" && system.beta_star >= 1.0 / 3.0 && system.beta_star < 0.4)
    w.push_back("beta* in [1/3, 2/5): only the slower polynomial rate applies");
  if (system.mode == "quasistatic")
    w.push_back("the non-coboundary hypothesis at t0 is assumed, not verified");
  return w;
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericError("SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

MapSequence make_sequence(const SystemSpec& y, std::size_t max_n) {
  const MapFamily family = y.family == "lsv" ? MapFamily::lsv() : MapFamily::slope_shift(y.base_slope);
  ParameterDriver driver = y.driver == "markov"   ? ParameterDriver::markov(y.lo, y.hi, y.states, y.stay, y.driver_seed)
                           : y.driver == "constant" ? ParameterDriver::constant(y.lo, y.driver_seed)
                                                    : ParameterDriver::iid(y.lo, y.hi, y.driver_seed);
  if (y.mode == "random") return MapSequence::random(family, driver, y.beta_star);
  if (y.mode == "quasistatic")
    return MapSequence::quasistatic(family, Curve::piecewise_linear(y.curve_t, y.curve_values), max_n, y.beta_star,
                                    y.eta);
  std::vector<double> params = y.params;
  if (params.empty()) params = driver.draws(max_n + 1);
  if (params.size() < max_n + 1) throw DomainError("system.params must cover the largest N");
  return MapSequence::sequential(family, std::move(params), y.beta_star);
}

Observable make_observable(const std::vector<std::string>& names) { return Observable::from_components(names); }

TestFunctionPtr find_test_function(const std::string& name, std::size_t d) {
  for (const auto& h : builtin_family(d))
    if (h->name() == name) return h;
  std::string known;
  for (const auto& h : builtin_family(d)) known += " " + h->name();
  throw ConfigError("unknown test function '" + name + "' (known:" + known + ")");
}

// ---------------------------------------------------------------- manifest

json RunManifest::to_json() const {
  json s = json::object();
  for (const auto& [k, v] : seeds) s[k] = v;
  json d = json::object();
  for (const auto& [k, v] : digests) d[k] = v;
  return json{{"command", command}, {"config_hash", config_hash}, {"config", config},     {"version", version},
              {"wall_seconds", wall_seconds}, {"seeds", s},   {"digests", d}, {"warnings", warnings}};
}

void RunManifest::write(const std::string& out_dir, const std::vector<std::string>& files) {
  for (const auto& f : files) digests[f] = file_sha256((fs::path(out_dir) / f).string());
  std::ofstream out(fs::path(out_dir) / ("manifest_" + command + ".json"));
  out << to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------- helpers

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::ofstream open_out(const ExperimentConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out);
  std::ofstream out(fs::path(cfg.out) / name);
  if (!out) throw ConfigError("cannot write " + (fs::path(cfg.out) / name).string());
  return out;
}

RunManifest start_manifest(const ExperimentConfig& cfg, const std::string& command) {
  RunManifest m;
  m.command = command;
  m.config_hash = cfg.hash();
  m.config = cfg.to_json();
  m.warnings = cfg.warnings();
  for (const auto& w : m.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return m;
}

RateFit::Model fit_model(const ExperimentConfig& cfg) {
  return cfg.fit_model == "pure_power" ? RateFit::Model::PurePower : RateFit::Model::PowerTimesLog;
}

std::string resolve_metric(const ExperimentConfig& cfg, std::size_t d) {
  if (cfg.metric != "auto") return cfg.metric;
  return d == 1 ? "wasserstein1d" : "sliced";
}

// Distance of W (rows of d) to N(0, sigma) under the named metric.
DistanceReport distance_to_normal(const std::string& metric, const std::vector<double>& W, std::size_t d,
                                  const Mat& sigma, const ExperimentConfig& cfg, std::uint64_t seed) {
  if (metric == "wasserstein1d") {
    if (d != 1) throw ConfigError("metric wasserstein1d needs a scalar observable");
    const double s = std::sqrt(sigma(0, 0));
    std::vector<double> x(W.size());
    for (std::size_t i = 0; i < W.size(); ++i) x[i] = W[i] / s;
    return wasserstein1_1d(std::move(x));
  }
  if (metric == "sliced") return sliced_wasserstein(W, d, sigma, cfg.directions, seed, resolve_threads(cfg.threads));
  return smooth_metric_distance(W, d, sigma, builtin_family(d));
}

std::string cache_path(const ExperimentConfig& cfg, const std::string& tag) {
  return (fs::path(cfg.out) / "cache" / (sha256_hex(cfg.hash() + ":" + tag) + ".bin")).string();
}

constexpr char kCacheMagic[8] = {'S', 'M', 'C', 'S', 'U', 'M', 'S', '1'};

bool read_cache(const std::string& path, std::vector<SumEnsemble>& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char magic[8];
  std::uint64_t count = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || !std::equal(magic, magic + 8, kCacheMagic) || count > 4096) return false;
  std::vector<SumEnsemble> res(count);
  for (auto& e : res) {
    std::uint64_t n = 0, S = 0, d = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    in.read(reinterpret_cast<char*>(&e.t), sizeof e.t);
    in.read(reinterpret_cast<char*>(&S), sizeof S);
    in.read(reinterpret_cast<char*>(&d), sizeof d);
    if (!in || d == 0 || d > 64 || S > (1ULL << 32)) return false;
    e.n = n;
    e.samples = S;
    e.dim = d;
    e.mean = Vec(static_cast<Eigen::Index>(d));
    in.read(reinterpret_cast<char*>(e.mean.data()), static_cast<std::streamsize>(d * sizeof(double)));
    e.values.resize(S * d);
    in.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(S * d * sizeof(double)));
    if (!in) return false;
  }
  out = std::move(res);
  return true;
}

void write_cache(const std::string& path, const std::vector<SumEnsemble>& sums) {
  fs::create_directories(fs::path(path).parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    const std::uint64_t count = sums.size();
    out.write(kCacheMagic, 8);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    for (const auto& e : sums) {
      const std::uint64_t n = e.n, S = e.samples, d = e.dim;
      out.write(reinterpret_cast<const char*>(&n), sizeof n);
      out.write(reinterpret_cast<const char*>(&e.t), sizeof e.t);
      out.write(reinterpret_cast<const char*>(&S), sizeof S);
      out.write(reinterpret_cast<const char*>(&d), sizeof d);
      out.write(reinterpret_cast<const char*>(e.mean.data()), static_cast<std::streamsize>(d * sizeof(double)));
      out.write(reinterpret_cast<const char*>(e.values.data()),
                static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    }
    if (!out) return;  // a cache that cannot be written is simply skipped
  }
  fs::rename(tmp, path);
}

RateFit fit_or_throw(const std::vector<DistanceReport>& ds, const std::vector<std::size_t>& ns, RateFit::Model m) {
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < ds.size(); ++i) pairs.emplace_back(static_cast<double>(ns[i]), ds[i].value);
  return fit_rate(pairs, m);
}

void write_plot(const ExperimentConfig& cfg, const std::string& name, const std::vector<std::size_t>& ns,
                const std::vector<DistanceReport>& ds) {
  std::ofstream plot = open_out(cfg, name);
  plot << "# log_N log_distance config_hash=" << cfg.hash() << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i)
    plot << csv_double(std::log(static_cast<double>(ns[i]))) << ' ' << csv_double(std::log(ds[i].value)) << '\n';
}

std::vector<std::size_t> sorted_grid(const ExperimentConfig& cfg) {
  std::vector<std::size_t> ns = cfg.n_grid;
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  return ns;
}

}  // namespace

std::vector<SumEnsemble> cached_sums(const ExperimentConfig& cfg, const MapSequence& seq, const Observable& f,
                                     const SumRequest& req, std::uint64_t seed, const std::string& tag) {
  const std::string path = cache_path(cfg, tag);
  std::vector<SumEnsemble> sums;
  if (cfg.cache && read_cache(path, sums)) return sums;
  sums = sum_ensembles(seq, f, req, cfg.samples, nullptr, seed, resolve_threads(cfg.threads));
  if (cfg.cache) write_cache(path, sums);
  return sums;
}

// ---------------------------------------------------------------- runs

RatesResult run_rates(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  RunManifest man = start_manifest(cfg, "rates");
  const std::vector<std::size_t> ns = sorted_grid(cfg);
  const MapSequence seq = make_sequence(cfg.system, ns.back());
  const Observable f = make_observable(cfg.observable);
  const std::size_t d = f.dim();
  const std::string metric = resolve_metric(cfg, d);
  const std::uint64_t slice_seed = stream_seed(cfg.seed, 2), floor_seed = stream_seed(cfg.seed, 3);
  man.seeds = {{"sums", cfg.seed}, {"slicing", slice_seed}, {"noise_floor", floor_seed}};

  const auto sums = cached_sums(cfg, seq, f, {ns, {1.0}}, cfg.seed, "rates");
  RatesResult res;
  res.ns = ns;
  for (const auto& e : sums) {
    const CovarianceSummary cs = summarize_covariance(e.covariance());
    if (cs.degenerate)
      throw NumericError("degenerate covariance at N=" + std::to_string(e.n) + " (lambda_min " +
                         csv_double(cs.lambda_min) + ")");
    res.lambda_min.push_back(cs.lambda_min);
    Mat target;
    std::vector<double> W;
    if (cfg.normalization == "self") {
      W = e.normalized(matrix_sqrt(cs.cov).b_inv);
      target = Mat::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    } else {
      W = e.normalized(NormalizationMatrix::sqrt_n(e.n, d).b_inv);
      target = cs.cov / static_cast<double>(e.n);
    }
    res.distances.push_back(distance_to_normal(metric, W, d, target, cfg, slice_seed));
    if (d > 1 && metric != "smooth") res.secondary.push_back(distance_to_normal("smooth", W, d, target, cfg, slice_seed));
  }
  if (metric != "smooth") {
    res.noise_floor = wasserstein_noise_floor(cfg.samples, floor_seed, 2);
    double smallest = res.distances.front().value;
    for (const auto& r : res.distances) smallest = std::min(smallest, r.value);
    res.floor_ok = res.noise_floor < smallest;
    if (!res.floor_ok) {
      const std::string w = "estimator noise floor " + csv_double(res.noise_floor) +
                            " is not below the smallest distance " + csv_double(smallest) + "; increase samples";
      std::fprintf(stderr, "warning: %s\n", w.c_str());
      man.warnings.push_back(w);
    }
  }
  res.fit = fit_or_throw(res.distances, ns, fit_model(cfg));

  const std::string hash = cfg.hash();
  {
    std::ofstream out = open_out(cfg, "rates.csv");
    write_distance_csv_header(out, true);
    for (std::size_t i = 0; i < ns.size(); ++i) write_distance_csv_row(out, res.distances[i], ns[i], hash);
    for (std::size_t i = 0; i < res.secondary.size(); ++i) write_distance_csv_row(out, res.secondary[i], ns[i], hash);
  }
  {
    std::ofstream out = open_out(cfg, "rates_fit.csv");
    write_rate_csv(out, res.fit, hash);
  }
  {
    std::ofstream out = open_out(cfg, "rates_lambda.csv");
    out << "N,lambda_min,config_hash\n";
    for (std::size_t i = 0; i < ns.size(); ++i)
      out << csv_line({std::to_string(ns[i]), csv_double(res.lambda_min[i]), hash}) << '\n';
  }
  write_plot(cfg, "rates_plot.txt", ns, res.distances);
  res.csv_path = (fs::path(cfg.out) / "rates.csv").string();
  man.wall_seconds = seconds_since(t0);
  man.write(cfg.out, {"rates.csv", "rates_fit.csv", "rates_lambda.csv", "rates_plot.txt"});
  return res;
}

namespace {

EnsembleMatrix sign_enumeration(std::size_t N, std::size_t d) {
  const std::size_t bits = N * d;
  if (bits > 16) throw ConfigError("sign enumeration needs steps * dim <= 16");
  const std::size_t atoms = std::size_t{1} << bits;
  std::vector<double> raw(atoms * bits);
  for (std::size_t a = 0; a < atoms; ++a)
    for (std::size_t k = 0; k < bits; ++k) raw[a * bits + k] = ((a >> k) & 1u) ? 1.0 : -1.0;
  return EnsembleMatrix(atoms, N, d, std::move(raw), {}, true);
}

}  // namespace

DecomposeResult run_decompose(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  RunManifest man = start_manifest(cfg, "decompose");
  const DecomposeSpec& ds = cfg.decompose;
  const Observable f = make_observable(cfg.observable);
  const std::size_t d = f.dim();
  if (d > 3) throw ConfigError("decompose supports d <= 3");
  EnsembleMatrix ens = ds.source == "sign_enumeration"
                           ? sign_enumeration(ds.steps, d)
                           : build_ensemble(make_sequence(cfg.system, ds.steps), f, ds.steps, ds.samples, nullptr,
                                            cfg.seed, resolve_threads(cfg.threads));
  man.seeds = {{"ensemble", cfg.seed}};
  if (!ens.all_zero()) {
    const CovarianceSummary cs = empirical_covariance(ens);
    if (cs.degenerate) throw NumericError("singular empirical covariance; increase N or S");
    ens.set_normalization(matrix_sqrt(cs.cov).b);
  }
  DecomposeResult res;
  const TestFunctionPtr h = find_test_function(ds.test_function, d);
  res.ledger = decompose(ens, h, SteinQuadrature{ds.hermite_order, ds.time_nodes}, UQuadrature{ds.u_order, ds.u_panels},
                         resolve_threads(cfg.threads));
  res.tolerance = ens.exhaustive() ? 1e-9 : 3.0 * res.ledger.residual_se + 1e-9;
  res.passed = std::abs(res.ledger.residual) <= res.tolerance;
  {
    std::ofstream out = open_out(cfg, "decompose.csv");
    res.ledger.write_csv(out, cfg.hash());
  }
  res.csv_path = (fs::path(cfg.out) / "decompose.csv").string();
  man.wall_seconds = seconds_since(t0);
  man.write(cfg.out, {"decompose.csv"});
  return res;
}

namespace {

Mat random_spd(std::size_t d, Rng& rng) {
  const auto D = static_cast<Eigen::Index>(d);
  Mat g(D, D);
  for (Eigen::Index i = 0; i < D; ++i)
    for (Eigen::Index j = 0; j < D; ++j) g(i, j) = rng.normal();
  const Mat q = Eigen::HouseholderQR<Mat>(g).householderQ();
  Vec lam(D);
  for (Eigen::Index i = 0; i < D; ++i) lam(i) = rng.uniform(0.5, 1.5);
  const Mat s = q * lam.asDiagonal() * q.transpose();
  return 0.5 * (s + s.transpose());
}

}  // namespace

SteinCheckResult run_stein_check(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  RunManifest man = start_manifest(cfg, "stein-check");
  const SteinCheckSpec& sc = cfg.stein_check;
  const std::size_t d = sc.dim;
  const auto D = static_cast<Eigen::Index>(d);
  std::vector<Mat> sigmas;
  if (sc.sigma == "identity") {
    sigmas.push_back(Mat::Identity(D, D));
  } else if (sc.sigma == "explicit") {
    Mat s(D, D);
    for (Eigen::Index i = 0; i < D; ++i)
      for (Eigen::Index j = 0; j < D; ++j) s(i, j) = sc.sigma_entries[static_cast<std::size_t>(i * D + j)];
    sigmas.push_back(s);
  } else {
    Rng rng(cfg.seed, 0x57E1);
    for (std::size_t i = 0; i < sc.matrices; ++i) sigmas.push_back(random_spd(d, rng));
  }
  man.seeds = {{"sigma", cfg.seed}};
  const auto grid = tensor_grid(d, sc.grid_points, -sc.grid_radius, sc.grid_radius);
  const std::size_t threads = resolve_threads(cfg.threads);
  SteinCheckResult res;
  for (std::size_t m = 0; m < sigmas.size(); ++m) {
    try {
      (void)cholesky_lower(sigmas[m]);
    } catch (const NumericError&) {
      throw ConfigError("stein_check sigma is not positive definite");
    }
    for (const auto& h : builtin_family(d)) {
      const SteinSolution sol(h, sigmas[m], SteinQuadrature{sc.hermite_order, sc.time_nodes});
      SteinCheckRow row;
      row.h = h->name();
      row.matrix = m;
      std::vector<double> resid;
      const DerivativeBoundReport b = derivative_bound_check(sol, grid, false, threads, &resid);
      row.max_residual = *std::max_element(resid.begin(), resid.end());
      const bool closed_form = row.h == "affine" || row.h == "quadratic";
      row.tolerance = closed_form ? 1e-10 : 1e-4;
      row.margin1 = b.margin[1];
      row.margin2 = b.margin[2];
      row.passed = row.max_residual <= row.tolerance && row.margin1 >= -1e-6 && row.margin2 >= -1e-6;
      res.passed = res.passed && row.passed;
      res.rows.push_back(row);
    }
  }
  {
    std::ofstream out = open_out(cfg, "stein_check.csv");
    const std::string hash = cfg.hash();
    out << "h,matrix,max_residual,tolerance,margin1,margin2,pass,config_hash\n";
    for (const auto& r : res.rows)
      out << csv_line({r.h, std::to_string(r.matrix), csv_double(r.max_residual), csv_double(r.tolerance),
                       csv_double(r.margin1), csv_double(r.margin2), r.passed ? "1" : "0", hash})
          << '\n';
  }
  res.csv_path = (fs::path(cfg.out) / "stein_check.csv").string();
  man.wall_seconds = seconds_since(t0);
  man.write(cfg.out, {"stein_check.csv"});
  return res;
}

QuenchedResult run_quenched(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  if (cfg.system.mode != "random") throw ConfigError("quenched runs need system.mode = random");
  RunManifest man = start_manifest(cfg, "quenched");
  const QuenchedSpec& q = cfg.quenched;
  const std::vector<std::size_t> ns = sorted_grid(cfg);
  const Observable f = make_observable(cfg.observable);
  const std::size_t d = f.dim();
  const std::uint64_t sigma_seed = stream_seed(cfg.seed, 4);
  man.seeds = {{"sums", cfg.seed}, {"sigma_series", sigma_seed}};

  QuenchedResult res;
  const MapSequence base = make_sequence(cfg.system, ns.back());
  res.sigma = sigma_series(base, f, q.lags, sigma_seed,
                           SigmaSeriesOptions{q.sigma_runs, q.sigma_samples, q.burn_in, resolve_threads(cfg.threads)});
  if (!(min_eigenvalue(res.sigma.sigma) > 1e-10))
    throw NumericError(
        "limiting covariance is not positive definite: the quenched normal approximation needs variance growing "
        "linearly in N, which fails exactly in this degenerate case");

  const std::string hash = cfg.hash();
  std::ofstream out = open_out(cfg, "quenched.csv");
  out << "replica,N,value,stderr,lambda_min,config_hash\n";
  for (std::size_t r = 0; r < q.replicas; ++r) {
    SystemSpec spec = cfg.system;
    spec.driver_seed = stream_seed(cfg.system.driver_seed, r);
    man.seeds["driver_replica_" + std::to_string(r)] = spec.driver_seed;
    const MapSequence seq = make_sequence(spec, ns.back());
    const auto sums = cached_sums(cfg, seq, f, {ns, {1.0}}, stream_seed(cfg.seed, 100 + r),
                                  "quenched_" + std::to_string(r));
    std::vector<DistanceReport> ds;
    std::vector<std::pair<double, double>> lam;
    for (const auto& e : sums) {
      const auto W = e.normalized(NormalizationMatrix::sqrt_n(e.n, d).b_inv);
      ds.push_back(smooth_metric_distance(W, d, res.sigma.sigma, builtin_family(d)));
      const double l = min_eigenvalue(e.covariance());
      lam.emplace_back(static_cast<double>(e.n), std::max(l, 1e-300));
      out << csv_line({std::to_string(r), std::to_string(e.n), csv_double(ds.back().value),
                       csv_double(ds.back().standard_error), csv_double(l), hash})
          << '\n';
    }
    res.fits.push_back(fit_or_throw(ds, ns, fit_model(cfg)));
    const double growth = fit_rate(lam, RateFit::Model::PurePower).exponent;
    res.lambda_growth.push_back(growth);
    res.degenerate_growth = res.degenerate_growth || growth < 0.5;
    res.distances.push_back(std::move(ds));
  }
  out.close();
  if (res.degenerate_growth) {
    const std::string w = "least eigenvalue of Cov(S_N) grows sub-linearly for some replica: near-degenerate observable";
    std::fprintf(stderr, "warning: %s\n", w.c_str());
    man.warnings.push_back(w);
  }
  {
    std::ofstream fit = open_out(cfg, "quenched_fit.csv");
    fit << "replica,model,exponent,halfwidth,r2,lambda_growth,config_hash\n";
    for (std::size_t r = 0; r < res.fits.size(); ++r)
      fit << csv_line({std::to_string(r), model_name(res.fits[r].model), csv_double(res.fits[r].exponent),
                       csv_double(res.fits[r].halfwidth), csv_double(res.fits[r].r2), csv_double(res.lambda_growth[r]),
                       hash})
          << '\n';
  }
  {
    std::ofstream sig = open_out(cfg, "quenched_sigma.csv");
    sig << "a,b,value,tail_estimate,config_hash\n";
    for (Eigen::Index a = 0; a < res.sigma.sigma.rows(); ++a)
      for (Eigen::Index b = 0; b < res.sigma.sigma.cols(); ++b)
        sig << csv_line({std::to_string(a), std::to_string(b), csv_double(res.sigma.sigma(a, b)),
                         csv_double(res.sigma.tail_estimate), hash})
            << '\n';
  }
  res.csv_path = (fs::path(cfg.out) / "quenched.csv").string();
  man.wall_seconds = seconds_since(t0);
  man.write(cfg.out, {"quenched.csv", "quenched_fit.csv", "quenched_sigma.csv"});
  return res;
}

QdsResult run_qds(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  if (cfg.system.mode != "quasistatic") throw ConfigError("qds runs need system.mode = quasistatic");
  RunManifest man = start_manifest(cfg, "qds");
  QdsResult res;
  res.ns = sorted_grid(cfg);
  const MapSequence seq = make_sequence(cfg.system, res.ns.back());
  const Observable f = make_observable(cfg.observable);
  const std::size_t d = f.dim();
  const std::string metric = resolve_metric(cfg, d);
  const std::uint64_t slice_seed = stream_seed(cfg.seed, 2);
  man.seeds = {{"sums", cfg.seed}, {"slicing", slice_seed}};
  std::vector<double> times{cfg.t0};
  if (cfg.t0 != 1.0) times.push_back(1.0);
  const auto sums = cached_sums(cfg, seq, f, {res.ns, times}, cfg.seed, "qds");
  const std::size_t T = times.size();
  const std::string hash = cfg.hash();
  std::ofstream out = open_out(cfg, "qds.csv");
  out << "n,t,lambda_min,metric,value,stderr,config_hash\n";
  for (std::size_t j = 0; j < res.ns.size(); ++j) {
    const SumEnsemble& at_t0 = sums[j * T];
    const SumEnsemble& at_1 = sums[j * T + T - 1];
    const CovarianceSummary c0 = summarize_covariance(at_t0.covariance());
    const CovarianceSummary c1 = summarize_covariance(at_1.covariance());
    if (c1.degenerate) throw NumericError("degenerate covariance at n=" + std::to_string(res.ns[j]));
    res.lambda_t0.push_back(c0.lambda_min);
    const auto W = at_1.normalized(matrix_sqrt(c1.cov).b_inv);
    res.distances.push_back(distance_to_normal(
        metric, W, d, Mat::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)), cfg, slice_seed));
    out << csv_line({std::to_string(res.ns[j]), csv_double(cfg.t0), csv_double(c0.lambda_min), "", "", "", hash})
        << '\n';
    out << csv_line({std::to_string(res.ns[j]), "1", csv_double(c1.lambda_min), metric_name(res.distances.back().metric),
                     csv_double(res.distances.back().value), csv_double(res.distances.back().standard_error), hash})
        << '\n';
  }
  out.close();
  for (std::size_t j = 1; j < res.lambda_t0.size(); ++j)
    res.lambda_ratios.push_back(res.lambda_t0[j] / res.lambda_t0[j - 1]);
  res.fit = fit_or_throw(res.distances, res.ns, fit_model(cfg));
  {
    std::ofstream fit = open_out(cfg, "qds_fit.csv");
    write_rate_csv(fit, res.fit, hash);
  }
  write_plot(cfg, "qds_plot.txt", res.ns, res.distances);
  res.csv_path = (fs::path(cfg.out) / "qds.csv").string();
  man.wall_seconds = seconds_since(t0);
  man.write(cfg.out, {"qds.csv", "qds_fit.csv", "qds_plot.txt"});
  return res;
}

SimulateResult simulate(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  RunManifest man = start_manifest(cfg, "simulate");
  const std::vector<std::size_t> ns = sorted_grid(cfg);
  const MapSequence seq = make_sequence(cfg.system, ns.back());
  const Observable f = make_observable(cfg.observable);
  man.seeds = {{"sums", cfg.seed}};
  SimulateResult res;
  res.sums = cached_sums(cfg, seq, f, {ns, cfg.times}, cfg.seed, "simulate");
  const std::string hash = cfg.hash();
  {
    std::ofstream out = open_out(cfg, "simulate.csv");
    out << "N,t,S,quantity,value,config_hash\n";
    for (const auto& e : res.sums) {
      const CovarianceSummary cs = summarize_covariance(e.covariance());
      auto row = [&](const std::string& q, double v) {
        out << csv_line({std::to_string(e.n), csv_double(e.t), std::to_string(e.samples), q, csv_double(v), hash})
            << '\n';
      };
      for (std::size_t a = 0; a < e.dim; ++a) row("mean[" + std::to_string(a) + "]", e.mean(static_cast<Eigen::Index>(a)));
      for (std::size_t a = 0; a < e.dim; ++a)
        for (std::size_t b = 0; b < e.dim; ++b)
          row("cov[" + std::to_string(a) + "][" + std::to_string(b) + "]",
              cs.cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
      row("lambda_min", cs.lambda_min);
    }
  }
  res.csv_path = (fs::path(cfg.out) / "simulate.csv").string();
  man.wall_seconds = seconds_since(t0);
  man.write(cfg.out, {"simulate.csv"});
  return res;
}

}  // namespace steinmc
