#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "steinmc/dynamics.hpp"
#include "steinmc/linalg.hpp"
#include "steinmc/sunklodas.hpp"
#include "steinmc/test_functions.hpp"

namespace steinmc {

class DensityVector;

struct NormalizationMatrix {
  enum class Provenance { SelfNorming, SqrtN, Custom };
  Mat b, b_inv;
  Provenance provenance = Provenance::Custom;
  double condition = 1.0;

  static NormalizationMatrix sqrt_n(std::size_t N, std::size_t d);
  static NormalizationMatrix custom(const Mat& b);
};

// Symmetric square root by eigendecomposition. NumericError when the least
// eigenvalue is <= 1e-10.
NormalizationMatrix matrix_sqrt(const Mat& sigma);

// S trajectories of length N from mu0 (nullptr = Lebesgue), observable values
// f(y_0), ..., f(y_{N-1}) centered per time step. b is the self-norming
// matrix when the sum covariance is nondegenerate, else the identity.
// Quasistatic sequences use row N.
EnsembleMatrix build_ensemble(const MapSequence& seq, const Observable& f, std::size_t N, std::size_t S,
                              const DensityVector* mu0, std::uint64_t seed, std::size_t threads = 1);

// Centered sums S_n(t) - mean over an ensemble of S orbits, one per (n, t).
struct SumEnsemble {
  std::size_t n = 0;
  double t = 1.0;
  std::size_t samples = 0, dim = 0;
  std::vector<double> values;  // s * dim + a, centered
  Vec mean;                    // ensemble mean before centering

  Mat covariance() const;
  // Rows of b^{-1} values.
  std::vector<double> normalized(const Mat& b_inv) const;
};

struct SumRequest {
  std::vector<std::size_t> ns;
  std::vector<double> times{1.0};  // t in (0, 1]
};

// Sums S_n(t) = sum_{k < floor(nt)} f_{n,k} + frac(nt) f_{n,floor(nt)} along row n.
// When the sequence is prefix-consistent and only t = 1 is requested, one
// pass of length max(ns) serves the whole grid (the ensembles then share
// orbits); otherwise row n is simulated separately. Results are ordered by
// n, then t.
std::vector<SumEnsemble> sum_ensembles(const MapSequence& seq, const Observable& f, const SumRequest& req,
                                       std::size_t S, const DensityVector* mu0, std::uint64_t seed,
                                       std::size_t threads = 1);

struct CovarianceSummary {
  Mat cov;
  double lambda_min = 0.0;
  double spectral_norm = 0.0;
  bool degenerate = false;  // lambda_min <= 1e-10 max(1, ||cov||)
};

CovarianceSummary empirical_covariance(const EnsembleMatrix& ens);
CovarianceSummary summarize_covariance(const Mat& cov);

// Inverse standard normal CDF: Acklam's rational approximation followed by one
// Halley step against erfc.
double normal_quantile(double p);

struct DistanceReport {
  enum class Metric { Wasserstein1D, SlicedWasserstein, SmoothMetric };
  Metric metric = Metric::Wasserstein1D;
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t samples = 0;
  std::size_t reference_samples = 0;  // 0 for an analytic reference
  std::string parameters;
};

std::string metric_name(DistanceReport::Metric m);

// (1/M) sum |x_(i) - Phi^{-1}((i - 1/2)/M)|.
DistanceReport wasserstein1_1d(std::vector<double> sample);
// Mean |x_(i) - y_(i)| of matched order statistics; equal sizes required.
DistanceReport wasserstein1_1d(std::vector<double> sample, std::vector<double> other);

// max over the family of |mean h(W) - Phi_Sigma(h)|, each h divided by
// max(1, ||D^3 h||). W holds M rows of d entries.
DistanceReport smooth_metric_distance(const std::vector<double>& W, std::size_t d, const Mat& sigma,
                                      const std::vector<TestFunctionPtr>& family, std::size_t hermite_order = 20);

// Average over P random unit directions of wasserstein1_1d(theta^T W / sqrt(theta^T Sigma theta)).
DistanceReport sliced_wasserstein(const std::vector<double>& W, std::size_t d, const Mat& sigma,
                                  std::size_t directions, std::uint64_t seed, std::size_t threads = 1);

// Positive homogeneity of Wasserstein-type distances.
DistanceReport scale_distance(const DistanceReport& report, double a);

// Mean of wasserstein1_1d over `reps` samples of M standard normals: the
// estimator's floor at sample size M.
double wasserstein_noise_floor(std::size_t M, std::uint64_t seed, std::size_t reps = 4);

struct SigmaSeriesOptions {
  std::size_t runs = 64;        // parameter sequences averaged over
  std::size_t samples = 4096;   // initial points per sequence
  std::size_t burn_in = 256;    // steps before the lag window
  std::size_t threads = 1;
};

struct SigmaSeries {
  Mat sigma;
  std::vector<Mat> lags;  // lag-k covariances, k = 0..K
  double tail_estimate = 0.0;
};

// sum_{k=0}^K (2 - delta_{k0}) C_k, C_k the lag-k covariance at time burn_in,
// averaged over independently seeded parameter sequences; symmetrized.
SigmaSeries sigma_series(const MapSequence& random_seq, const Observable& f, std::size_t K, std::uint64_t seed,
                         SigmaSeriesOptions opt = {});

struct RateFit {
  enum class Model { PurePower, PowerTimesLog };
  Model model = Model::PurePower;
  std::vector<double> ns;
  std::vector<double> distances;
  double exponent = 0.0;
  double intercept = 0.0;
  double halfwidth = 0.0;  // 95% confidence
  double r2 = 1.0;
};

std::string model_name(RateFit::Model m);

// Least squares of log d (PurePower) or log d - log log N (PowerTimesLog)
// against log N. Needs >= 4 points spanning >= 3 octaves and positive d.
RateFit fit_rate(const std::vector<std::pair<double, double>>& pairs, RateFit::Model model);

// CSV rows (metric,N,S,value,stderr) and (model,exponent,halfwidth,r2), each
// with an optional config_hash column.
void write_distance_csv_header(std::ostream& os, bool with_hash);
void write_distance_csv_row(std::ostream& os, const DistanceReport& r, std::size_t N, const std::string& hash = "");
void write_rate_csv(std::ostream& os, const RateFit& fit, const std::string& hash = "");

}  // namespace steinmc
