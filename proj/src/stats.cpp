#include "steinmc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include <boost/math/distributions/students_t.hpp>

#include "steinmc/csv.hpp"
#include "steinmc/engine.hpp"
#include "steinmc/errors.hpp"
#include "steinmc/parallel.hpp"
#include "steinmc/stein.hpp"
#include "steinmc/transfer.hpp"

namespace steinmc {

NormalizationMatrix NormalizationMatrix::sqrt_n(std::size_t N, std::size_t d) {
  if (N == 0 || d == 0) throw DomainError("sqrt(N) normalization needs N, d >= 1");
  NormalizationMatrix m;
  const auto D = static_cast<Eigen::Index>(d);
  m.b = std::sqrt(static_cast<double>(N)) * Mat::Identity(D, D);
  m.b_inv = m.b.inverse();
  m.provenance = Provenance::SqrtN;
  m.condition = 1.0;
  return m;
}

NormalizationMatrix NormalizationMatrix::custom(const Mat& b) {
  NormalizationMatrix m;
  m.b = b;
  m.b_inv = checked_inverse(b);
  m.provenance = Provenance::Custom;
  Eigen::JacobiSVD<Mat> svd(b);
  const Vec sv = svd.singularValues();
  m.condition = sv(0) / sv(sv.size() - 1);
  return m;
}

NormalizationMatrix matrix_sqrt(const Mat& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) throw DomainError("matrix_sqrt needs a square matrix");
  if (asymmetry(sigma) > 1e-9 * std::max(1.0, sigma.cwiseAbs().maxCoeff()))
    throw DomainError("matrix_sqrt needs a symmetric matrix");
  const Mat sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  const Vec ev = es.eigenvalues();
  if (!(ev(0) > 1e-10))
    throw NumericError("covariance is degenerate (least eigenvalue " + std::to_string(ev(0)) + ")");
  NormalizationMatrix m;
  const Vec root = ev.cwiseSqrt();
  m.b = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  m.b_inv = es.eigenvectors() * root.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  m.provenance = NormalizationMatrix::Provenance::SelfNorming;
  m.condition = root(root.size() - 1) / root(0);
  return m;
}

CovarianceSummary summarize_covariance(const Mat& cov) {
  CovarianceSummary out;
  out.cov = 0.5 * (cov + cov.transpose());
  out.lambda_min = min_eigenvalue(out.cov);
  out.spectral_norm = spectral_norm(out.cov);
  out.degenerate = !(out.lambda_min > 1e-10 * std::max(1.0, out.spectral_norm));
  return out;
}

CovarianceSummary empirical_covariance(const EnsembleMatrix& ens) { return summarize_covariance(ens.sum_covariance()); }

EnsembleMatrix build_ensemble(const MapSequence& seq, const Observable& f, std::size_t N, std::size_t S,
                              const DensityVector* mu0, std::uint64_t seed, std::size_t threads) {
  if (S < 100) throw DomainError("build_ensemble needs S >= 100");
  if (N < 1) throw DomainError("build_ensemble needs N >= 1");
  const std::size_t d = f.dim();
  const OrbitPlan plan(seq, N, N);
  std::vector<double> raw(S * N * d);
  for_each_sample_block(S, seed, 0, resolve_threads(threads), [&](std::size_t first, std::size_t last, Rng& rng) {
    BitPool bits(rng);
    for (std::size_t s = first; s < last; ++s) {
      double x = draw_initial(mu0, rng);
      for (std::size_t k = 0; k < N; ++k) {
        f.evaluate(x, &raw[(s * N + k) * d]);
        if (k + 1 < N) x = plan.step(k, x, bits);
      }
    }
  });
  EnsembleMatrix ens(S, N, d, std::move(raw));
  const CovarianceSummary cs = empirical_covariance(ens);
  if (!cs.degenerate) ens.set_normalization(matrix_sqrt(cs.cov).b);
  return ens;
}

Mat SumEnsemble::covariance() const {
  const auto D = static_cast<Eigen::Index>(dim);
  Mat c(D, D);
  std::vector<double> t(samples);
  for (std::size_t a = 0; a < dim; ++a)
    for (std::size_t b = a; b < dim; ++b) {
      for (std::size_t s = 0; s < samples; ++s) t[s] = values[s * dim + a] * values[s * dim + b];
      const double v = pairwise_sum(t.begin(), t.end()) / static_cast<double>(samples);
      c(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
      c(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = v;
    }
  return c;
}

std::vector<double> SumEnsemble::normalized(const Mat& b_inv) const {
  std::vector<double> out(values.size());
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t a = 0; a < dim; ++a) {
      double v = 0.0;
      for (std::size_t c = 0; c < dim; ++c)
        v += b_inv(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) * values[s * dim + c];
      out[s * dim + a] = v;
    }
  return out;
}

namespace {

// Orbits advanced together; independent dependency chains let the core
// overlap the latency of the map evaluations.
constexpr std::size_t kLanes = 4;

void center(SumEnsemble& e) {
  e.mean = Vec(static_cast<Eigen::Index>(e.dim));
  std::vector<double> t(e.samples);
  for (std::size_t a = 0; a < e.dim; ++a) {
    for (std::size_t s = 0; s < e.samples; ++s) t[s] = e.values[s * e.dim + a];
    const double m = pairwise_sum(t.begin(), t.end()) / static_cast<double>(e.samples);
    e.mean(static_cast<Eigen::Index>(a)) = m;
    for (std::size_t s = 0; s < e.samples; ++s) e.values[s * e.dim + a] -= m;
  }
}

}  // namespace

std::vector<SumEnsemble> sum_ensembles(const MapSequence& seq, const Observable& f, const SumRequest& req,
                                       std::size_t S, const DensityVector* mu0, std::uint64_t seed,
                                       std::size_t threads) {
  if (S < 2) throw DomainError("sum ensembles need S >= 2");
  if (req.ns.empty() || req.times.empty()) throw DomainError("sum request needs n values and times");
  std::vector<std::size_t> ns = req.ns;
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  if (ns.front() == 0) throw DomainError("sum request needs n >= 1");
  std::vector<double> ts = req.times;
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  for (double t : ts)
    if (!(t > 0.0 && t <= 1.0)) throw DomainError("sum times must lie in (0, 1]");
  const std::size_t d = f.dim();
  threads = resolve_threads(threads);

  std::vector<SumEnsemble> out;
  for (std::size_t n : ns)
    for (double t : ts) {
      SumEnsemble e;
      e.n = n;
      e.t = t;
      e.samples = S;
      e.dim = d;
      e.values.assign(S * d, 0.0);
      out.push_back(std::move(e));
    }
  const std::size_t T = ts.size();

  if (seq.prefix_consistent() && T == 1 && ts[0] == 1.0) {
    const std::size_t M = ns.back();
    const OrbitPlan plan(seq, M, M);
    for_each_sample_block(S, seed, 0, threads, [&](std::size_t first, std::size_t last, Rng& rng) {
      BitPool bits(rng);
      double x[kLanes];
      std::vector<double> acc(kLanes * d), v(d);
      for (std::size_t s0 = first; s0 < last; s0 += kLanes) {
        const std::size_t lanes = std::min(kLanes, last - s0);
        for (std::size_t l = 0; l < lanes; ++l) x[l] = draw_initial(mu0, rng);
        std::fill(acc.begin(), acc.end(), 0.0);
        std::size_t j = 0;
        for (std::size_t k = 0; k < M; ++k) {
          for (std::size_t l = 0; l < lanes; ++l) {
            f.evaluate(x[l], v.data());
            for (std::size_t a = 0; a < d; ++a) acc[l * d + a] += v[a];
          }
          if (k + 1 == ns[j]) {
            for (std::size_t l = 0; l < lanes; ++l)
              std::copy(&acc[l * d], &acc[l * d] + d, &out[j].values[(s0 + l) * d]);
            ++j;
          }
          if (k + 1 < M)
            for (std::size_t l = 0; l < lanes; ++l) x[l] = plan.step(k, x[l], bits);
        }
      }
    });
  } else {
    for (std::size_t j = 0; j < ns.size(); ++j) {
      const std::size_t n = ns[j];
      std::vector<std::size_t> whole(T);
      std::vector<double> frac(T);
      for (std::size_t q = 0; q < T; ++q) {
        const double nt = static_cast<double>(n) * ts[q];
        whole[q] = std::min(n, static_cast<std::size_t>(std::floor(nt)));
        frac[q] = nt - static_cast<double>(whole[q]);
      }
      const std::size_t steps = whole.back() + 1;
      const OrbitPlan plan(seq, n, steps - 1);
      for_each_sample_block(S, seed, j + 1, threads, [&](std::size_t first, std::size_t last, Rng& rng) {
        BitPool bits(rng);
        double x[kLanes];
        std::vector<double> acc(kLanes * d), v(kLanes * d);
        for (std::size_t s0 = first; s0 < last; s0 += kLanes) {
          const std::size_t lanes = std::min(kLanes, last - s0);
          for (std::size_t l = 0; l < lanes; ++l) x[l] = draw_initial(mu0, rng);
          std::fill(acc.begin(), acc.end(), 0.0);
          std::size_t q = 0;
          for (std::size_t k = 0; k < steps; ++k) {
            for (std::size_t l = 0; l < lanes; ++l) f.evaluate(x[l], &v[l * d]);
            // Times whose integral ends inside [k, k + 1).
            for (; q < T && whole[q] == k; ++q)
              for (std::size_t l = 0; l < lanes; ++l) {
                double* dst = &out[j * T + q].values[(s0 + l) * d];
                for (std::size_t a = 0; a < d; ++a) dst[a] = acc[l * d + a] + frac[q] * v[l * d + a];
              }
            for (std::size_t e = 0; e < lanes * d; ++e) acc[e] += v[e];
            if (k + 1 < steps)
              for (std::size_t l = 0; l < lanes; ++l) x[l] = plan.step(k, x[l], bits);
          }
        }
      });
    }
  }
  for (auto& e : out) center(e);
  return out;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile needs p in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double e[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double lo = 0.02425;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((e[0] * q + e[1]) * q + e[2]) * q + e[3]) * q + 1.0);
  } else if (p <= 1.0 - lo) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((e[0] * q + e[1]) * q + e[2]) * q + e[3]) * q + 1.0);
  }
  const double err = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = err * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

std::string metric_name(DistanceReport::Metric m) {
  switch (m) {
    case DistanceReport::Metric::Wasserstein1D: return "wasserstein1d";
    case DistanceReport::Metric::SlicedWasserstein: return "sliced_wasserstein";
    case DistanceReport::Metric::SmoothMetric: return "smooth_metric";
  }
  return "unknown";
}

namespace {

DistanceReport mean_abs_report(const std::vector<double>& terms) {
  const std::size_t M = terms.size();
  DistanceReport r;
  r.samples = M;
  r.value = pairwise_sum(terms.begin(), terms.end()) / static_cast<double>(M);
  std::vector<double> dev(M);
  for (std::size_t i = 0; i < M; ++i) dev[i] = (terms[i] - r.value) * (terms[i] - r.value);
  r.standard_error = std::sqrt(pairwise_sum(dev.begin(), dev.end()) / static_cast<double>(M - 1) / static_cast<double>(M));
  return r;
}

}  // namespace

DistanceReport wasserstein1_1d(std::vector<double> sample) {
  const std::size_t M = sample.size();
  if (M < 100) throw DomainError("wasserstein1_1d needs at least 100 samples");
  std::sort(sample.begin(), sample.end());
  std::vector<double> terms(M);
  for (std::size_t i = 0; i < M; ++i) {
    const double q = normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(M));
    terms[i] = std::abs(sample[i] - q);
  }
  DistanceReport r = mean_abs_report(terms);
  r.parameters = "reference=std_normal";
  return r;
}

DistanceReport wasserstein1_1d(std::vector<double> sample, std::vector<double> other) {
  if (sample.size() != other.size()) throw DomainError("two-sample wasserstein1_1d needs equal sizes");
  if (sample.size() < 100) throw DomainError("wasserstein1_1d needs at least 100 samples");
  std::sort(sample.begin(), sample.end());
  std::sort(other.begin(), other.end());
  std::vector<double> terms(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) terms[i] = std::abs(sample[i] - other[i]);
  DistanceReport r = mean_abs_report(terms);
  r.reference_samples = other.size();
  r.parameters = "reference=sample";
  return r;
}

DistanceReport smooth_metric_distance(const std::vector<double>& W, std::size_t d, const Mat& sigma,
                                      const std::vector<TestFunctionPtr>& family, std::size_t hermite_order) {
  if (d == 0 || W.size() % d != 0) throw DomainError("sample array does not match the dimension");
  const std::size_t M = W.size() / d;
  if (M < 2) throw DomainError("smooth metric needs at least two samples");
  DistanceReport r;
  r.metric = DistanceReport::Metric::SmoothMetric;
  r.samples = M;
  std::vector<double> vals(M);
  std::string names;
  for (const auto& h : family) {
    if (h->dim() != d) throw DomainError("test function dimension mismatch");
    const double scale = 1.0 / std::max(1.0, h->norm(3));
    for (std::size_t s = 0; s < M; ++s) vals[s] = h->value(&W[s * d]);
    const double mean = pairwise_sum(vals.begin(), vals.end()) / static_cast<double>(M);
    const double gap = scale * std::abs(mean - gaussian_expectation(*h, sigma, hermite_order));
    if (!names.empty()) names += ';';
    names += h->name();
    if (gap >= r.value) {
      r.value = gap;
      double v = 0.0;
      for (double x : vals) v += (x - mean) * (x - mean);
      r.standard_error = scale * std::sqrt(v / static_cast<double>(M - 1) / static_cast<double>(M));
    }
  }
  r.parameters = "family=" + names;
  return r;
}

DistanceReport sliced_wasserstein(const std::vector<double>& W, std::size_t d, const Mat& sigma,
                                  std::size_t directions, std::uint64_t seed, std::size_t threads) {
  if (d == 0 || W.size() % d != 0) throw DomainError("sample array does not match the dimension");
  if (directions < 32) throw DomainError("sliced_wasserstein needs at least 32 directions");
  const std::size_t M = W.size() / d;
  DistanceReport r;
  if (d == 1) {
    const double s = std::sqrt(sigma(0, 0));
    std::vector<double> x(M);
    for (std::size_t i = 0; i < M; ++i) x[i] = W[i] / s;
    r = wasserstein1_1d(std::move(x));
  } else {
    Rng rng(seed, 0x5117ED);
    std::vector<Vec> dirs(directions);
    for (auto& th : dirs) {
      th = Vec(static_cast<Eigen::Index>(d));
      do {
        for (std::size_t a = 0; a < d; ++a) th(static_cast<Eigen::Index>(a)) = rng.normal();
      } while (th.norm() == 0.0);
      th /= th.norm();
    }
    std::vector<double> vals(directions), ses(directions);
    parallel_for(directions, resolve_threads(threads), [&](std::size_t p) {
      const Vec& th = dirs[p];
      const double s = std::sqrt(th.dot(sigma * th));
      std::vector<double> x(M);
      for (std::size_t i = 0; i < M; ++i) {
        double v = 0.0;
        for (std::size_t a = 0; a < d; ++a) v += th(static_cast<Eigen::Index>(a)) * W[i * d + a];
        x[i] = v / s;
      }
      const DistanceReport one = wasserstein1_1d(std::move(x));
      vals[p] = one.value;
      ses[p] = one.standard_error;
    });
    r.value = pairwise_sum(vals.begin(), vals.end()) / static_cast<double>(directions);
    // Directions share the sample, so their errors are not independent; the
    // mean of per-direction errors is a conservative summary.
    r.standard_error = pairwise_sum(ses.begin(), ses.end()) / static_cast<double>(directions);
    r.samples = M;
  }
  r.metric = DistanceReport::Metric::SlicedWasserstein;
  r.parameters = "directions=" + std::to_string(directions);
  return r;
}

DistanceReport scale_distance(const DistanceReport& report, double a) {
  if (!(a > 0.0)) throw DomainError("scale_distance needs a > 0");
  if (report.metric == DistanceReport::Metric::SmoothMetric)
    throw UnsupportedError("positive homogeneity holds for Wasserstein-type metrics only");
  DistanceReport r = report;
  r.value *= a;
  r.standard_error *= a;
  return r;
}

double wasserstein_noise_floor(std::size_t M, std::uint64_t seed, std::size_t reps) {
  if (reps == 0) throw DomainError("noise floor needs at least one repetition");
  double total = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    Rng rng(seed, 0xF100 + r);
    std::vector<double> x(M);
    for (double& v : x) v = rng.normal();
    total += wasserstein1_1d(std::move(x)).value;
  }
  return total / static_cast<double>(reps);
}

SigmaSeries sigma_series(const MapSequence& seq, const Observable& f, std::size_t K, std::uint64_t seed,
                         SigmaSeriesOptions opt) {
  if (!seq.prefix_consistent()) throw UnsupportedError("sigma_series needs a sequential or random system");
  if (opt.runs == 0 || opt.samples < 2) throw DomainError("sigma_series needs runs >= 1 and samples >= 2");
  const std::size_t d = f.dim();
  const auto D = static_cast<Eigen::Index>(d);
  const std::size_t steps = opt.burn_in + K + 1;
  std::vector<std::vector<Mat>> per_run(opt.runs);
  parallel_for(opt.runs, resolve_threads(opt.threads), [&](std::size_t r) {
    const MapSequence run_seq = seq.mode() == MapSequence::Mode::Random
                                    ? MapSequence::random(seq.family(), seq.driver()->with_seed(stream_seed(seed, r)),
                                                          seq.beta_star())
                                    : seq;
    const OrbitPlan plan(run_seq, steps, steps);
    Rng rng(seed, 0x5E000000ULL + r);
    BitPool bits(rng);
    const std::size_t S = opt.samples;
    std::vector<double> window(S * (K + 1) * d);
    for (std::size_t s = 0; s < S; ++s) {
      double x = rng.uniform();
      for (std::size_t k = 0; k < steps; ++k) {
        if (k >= opt.burn_in) f.evaluate(x, &window[(s * (K + 1) + (k - opt.burn_in)) * d]);
        if (k + 1 < steps) x = plan.step(k, x, bits);
      }
    }
    std::vector<double> mean((K + 1) * d, 0.0);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t e = 0; e < (K + 1) * d; ++e) mean[e] += window[s * (K + 1) * d + e];
    for (double& m : mean) m /= static_cast<double>(S);
    std::vector<Mat> lags(K + 1, Mat::Zero(D, D));
    for (std::size_t k = 0; k <= K; ++k)
      for (std::size_t s = 0; s < S; ++s) {
        const double* f0 = &window[s * (K + 1) * d];
        const double* fk = &window[(s * (K + 1) + k) * d];
        for (std::size_t a = 0; a < d; ++a)
          for (std::size_t b = 0; b < d; ++b)
            lags[k](static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
                (f0[a] - mean[a]) * (fk[b] - mean[k * d + b]);
      }
    for (auto& L : lags) L /= static_cast<double>(S);
    per_run[r] = std::move(lags);
  });
  SigmaSeries out;
  out.lags.assign(K + 1, Mat::Zero(D, D));
  for (const auto& run : per_run)
    for (std::size_t k = 0; k <= K; ++k) out.lags[k] += run[k] / static_cast<double>(opt.runs);
  out.sigma = out.lags[0];
  for (std::size_t k = 1; k <= K; ++k) out.sigma += out.lags[k] + out.lags[k].transpose();
  out.sigma = 0.5 * (out.sigma + out.sigma.transpose());
  out.tail_estimate = (K == 0 ? 1.0 : 2.0) * spectral_norm(out.lags[K]);
  return out;
}

std::string model_name(RateFit::Model m) {
  return m == RateFit::Model::PurePower ? "pure_power" : "power_times_log";
}

RateFit fit_rate(const std::vector<std::pair<double, double>>& pairs, RateFit::Model model) {
  if (pairs.size() < 4) throw DomainError("fit_rate needs at least 4 points");
  double lo = pairs.front().first, hi = lo;
  for (const auto& [n, dist] : pairs) {
    if (!(n > 1.0)) throw DomainError("fit_rate needs N > 1");
    if (!(dist > 0.0)) throw DomainError("fit_rate needs positive distances");
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  if (hi < 8.0 * lo * (1.0 - 1e-12)) throw DomainError("fit_rate needs N spanning at least 3 octaves");
  RateFit fit;
  fit.model = model;
  const std::size_t m = pairs.size();
  std::vector<double> x(m), y(m);
  for (std::size_t i = 0; i < m; ++i) {
    fit.ns.push_back(pairs[i].first);
    fit.distances.push_back(pairs[i].second);
    x[i] = std::log(pairs[i].first);
    y[i] = std::log(pairs[i].second);
    if (model == RateFit::Model::PowerTimesLog) y[i] -= std::log(x[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  fit.exponent = sxy / sxx;
  fit.intercept = my - fit.exponent * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = y[i] - fit.intercept - fit.exponent * x[i];
    sse += r * r;
  }
  const double scale = std::max(1.0, syy);
  fit.r2 = sse <= 1e-24 * scale ? 1.0 : 1.0 - sse / syy;
  const boost::math::students_t dist(static_cast<double>(m - 2));
  const double tq = boost::math::quantile(boost::math::complement(dist, 0.025));
  fit.halfwidth = tq * std::sqrt(sse / static_cast<double>(m - 2) / sxx);
  return fit;
}

void write_distance_csv_header(std::ostream& os, bool with_hash) {
  os << "metric,N,S,value,stderr" << (with_hash ? ",config_hash" : "") << '\n';
}

void write_distance_csv_row(std::ostream& os, const DistanceReport& r, std::size_t N, const std::string& hash) {
  std::vector<std::string> f{metric_name(r.metric), std::to_string(N), std::to_string(r.samples),
                             csv_double(r.value), csv_double(r.standard_error)};
  if (!hash.empty()) f.push_back(hash);
  os << csv_line(f) << '\n';
}

void write_rate_csv(std::ostream& os, const RateFit& fit, const std::string& hash) {
  os << "model,exponent,halfwidth,r2" << (hash.empty() ? "" : ",config_hash") << '\n';
  std::vector<std::string> f{model_name(fit.model), csv_double(fit.exponent), csv_double(fit.halfwidth),
                             csv_double(fit.r2)};
  if (!hash.empty()) f.push_back(hash);
  os << csv_line(f) << '\n';
}

}  // namespace steinmc
