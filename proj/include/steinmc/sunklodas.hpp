#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "steinmc/linalg.hpp"
#include "steinmc/stein.hpp"
#include "steinmc/test_functions.hpp"

namespace steinmc {

// S samples x N times x d components of centered observable values, with a
// probability weight per sample. Weights are uniform for Monte Carlo
// ensembles; a weighted finite sample space is evaluated exhaustively.
class EnsembleMatrix {
 public:
  EnsembleMatrix() = default;
  // `raw` is indexed (s * N + i) * d + a. Values are centered per time step
  // under the weights. Empty weights mean uniform.
  EnsembleMatrix(std::size_t samples, std::size_t steps, std::size_t dim, std::vector<double> raw,
                 std::vector<double> weights = {}, bool exhaustive = false);

  std::size_t samples() const { return S_; }
  std::size_t steps() const { return N_; }
  std::size_t dim() const { return d_; }
  bool exhaustive() const { return exhaustive_; }
  double weight(std::size_t s) const { return weights_.empty() ? 1.0 / static_cast<double>(S_) : weights_[s]; }
  const double* at(std::size_t s, std::size_t i) const { return values_.data() + (s * N_ + i) * d_; }
  const std::vector<double>& values() const { return values_; }
  // max over samples and times of |f^i|
  double bound() const { return bound_; }
  bool all_zero() const;

  const Mat& b() const { return b_; }
  const Mat& b_inverse() const { return b_inv_; }
  // DomainError when b is singular or has the wrong shape.
  void set_normalization(const Mat& b);

  // Empirical covariance of sum_i fbar^i (unnormalized).
  Mat sum_covariance() const;
  // Empirical mu(W W^T) with W = b^{-1} sum_i fbar^i.
  Mat w_covariance() const;

 private:
  std::size_t S_ = 0, N_ = 0, d_ = 0;
  std::vector<double> values_;
  std::vector<double> weights_;
  bool exhaustive_ = false;
  double bound_ = 0.0;
  Mat b_, b_inv_;
};

// Punctured sums for one sample row, with [n]_m = {i : |i - n| <= m}.
struct PuncturedSums {
  Vec W;    // sum_i b^{-1} fbar^i
  Vec Wnm;  // W minus the terms with |i - n| <= m
  Vec Ynm;  // terms with |i - n| = m
};

PuncturedSums punctured(const EnsembleMatrix& ens, std::size_t sample, std::size_t n, long m);

// Gradient and row-major Hessian of a C^2 potential A on R^d.
struct Potential {
  std::size_t dim = 0;
  std::function<void(const double* w, double* grad, double* hess)> derivatives;
};

Potential potential_of(const SteinSolution& sol);

// delta^{n,k}(u) = D^2A(W^{n,k} + u Y^{n,k}) - D^2A(W^{n,k})
Mat delta(const SteinSolution& sol, const EnsembleMatrix& ens, std::size_t sample, std::size_t n, long k, double u);

struct UQuadrature {
  std::size_t order = 8;
  std::size_t panels = 1;
};

struct DecompositionLedger {
  double E[7] = {0, 0, 0, 0, 0, 0, 0};
  double se[7] = {0, 0, 0, 0, 0, 0, 0};
  double lhs = 0.0, lhs_se = 0.0;
  double residual = 0.0, residual_se = 0.0;
  std::size_t samples = 0;
  bool exhaustive = false;

  double sum() const;
  // Rows term,value,stderr (E1..E7, LHS, residual), with an optional
  // config_hash column.
  void write_csv(std::ostream& os, const std::string& config_hash = "") const;
};

// Seven-term split of mu[tr Sigma D^2A(W) - W^T grad A(W)], Sigma = mu(W W^T)
// on the ensemble itself. E6/E7 use inner expectations mu(delta^{n,k}) taken
// on the same ensemble in a first pass. Standard errors of the centered terms
// include the sampling error of those inner means (influence-function form).
DecompositionLedger decompose(const EnsembleMatrix& ens, const Potential& A, UQuadrature uq = {},
                              std::size_t threads = 1);
// Requires sol.sigma() to match mu(W W^T) of the ensemble.
DecompositionLedger decompose(const EnsembleMatrix& ens, const SteinSolution& sol, UQuadrature uq = {},
                              std::size_t threads = 1);
// Builds the Stein solution for h with Sigma = mu(W W^T). NumericError when
// that covariance is singular.
DecompositionLedger decompose(const EnsembleMatrix& ens, const TestFunctionPtr& h, SteinQuadrature q = {},
                              UQuadrature uq = {}, std::size_t threads = 1);

// max_a |sum_m [grad A(W^{n,m-1}) - grad A(W^{n,m})] - (grad A(W) - grad A(0))|
double telescoping_defect(const EnsembleMatrix& ens, const Potential& A, std::size_t sample, std::size_t n);

// Decay envelopes rho(m).
struct RhoModel {
  enum class Kind { Geometric, Intermittent };
  Kind kind = Kind::Geometric;
  double gamma = 0.5;  // geometric rate
  double beta = 0.25;  // intermittent beta_*

  static RhoModel geometric(double gamma);
  static RhoModel intermittent(double beta);
  double operator()(std::size_t m) const;
  std::string describe() const;
};

struct ConditionEstimate {
  double value = 0.0;  // |numerator| at the worst probe
  double standard_error = 0.0;
  double ratio = 0.0;  // value / envelope
  std::size_t worst_probe = 0;
};

// |mu(fbar^n_alpha fbar^m_beta)| against C1 rho(|n - m|).
ConditionEstimate estimate_condition_A1(const EnsembleMatrix& ens, std::size_t n, std::size_t m, std::size_t alpha,
                                        std::size_t beta, const RhoModel& rho, double C1 = 1.0);

// Latin hypercube of (s, t, z) in [0,1]^2 x [-zmax, zmax]^d.
std::vector<GhParams> latin_hypercube_probes(std::size_t d, std::size_t count, std::uint64_t seed,
                                             double zmax = 4.0);

struct ConditionOptions {
  std::size_t norm_points = 64;  // x and y samples for the sup norms of G_h
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

// max over probes of |mu[(fbar^n)^T G_h(sum_{|i-n|>k} fbar^i, fbar^{n,k}) fbar^{n,m}]|
// / ((||G_h|| + ||grad G_h||) rho(m)), an empirical lower bound for C2.
ConditionEstimate estimate_condition_A2(const EnsembleMatrix& ens, const TestFunction& h, const Mat& b, std::size_t n,
                                        std::size_t m, std::size_t k, const std::vector<GhParams>& probes,
                                        const RhoModel& rho, ConditionOptions opt = {});
// Same with G_h centered by its ensemble mean and envelope rho(k - m).
ConditionEstimate estimate_condition_A3(const EnsembleMatrix& ens, const TestFunction& h, const Mat& b, std::size_t n,
                                        std::size_t m, std::size_t k, const std::vector<GhParams>& probes,
                                        const RhoModel& rho, ConditionOptions opt = {});

}  // namespace steinmc
