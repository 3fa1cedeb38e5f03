#include "steinmc/sunklodas.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "steinmc/csv.hpp"
#include "steinmc/errors.hpp"
#include "steinmc/parallel.hpp"
#include "steinmc/quadrature.hpp"
#include "steinmc/rng.hpp"

namespace steinmc {

EnsembleMatrix::EnsembleMatrix(std::size_t samples, std::size_t steps, std::size_t dim, std::vector<double> raw,
                               std::vector<double> weights, bool exhaustive)
    : S_(samples), N_(steps), d_(dim), values_(std::move(raw)), weights_(std::move(weights)), exhaustive_(exhaustive) {
  if (S_ < 2) throw DomainError("ensemble needs at least two samples to center");
  if (N_ < 1 || d_ < 1) throw DomainError("ensemble needs N >= 1 and d >= 1");
  if (values_.size() != S_ * N_ * d_) throw DomainError("ensemble value array has the wrong size");
  if (!weights_.empty()) {
    if (weights_.size() != S_) throw DomainError("one weight per sample required");
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0)) throw DomainError("sample weights must be nonnegative");
      total += w;
    }
    if (!(total > 0.0)) throw DomainError("sample weights sum to zero");
    for (double& w : weights_) w /= total;
  }
  for (double v : values_) bound_ = std::max(bound_, std::abs(v));
  std::vector<double> terms(S_);
  for (std::size_t i = 0; i < N_; ++i)
    for (std::size_t a = 0; a < d_; ++a) {
      for (std::size_t s = 0; s < S_; ++s) terms[s] = weight(s) * values_[(s * N_ + i) * d_ + a];
      const double mean = pairwise_sum(terms.begin(), terms.end());
      for (std::size_t s = 0; s < S_; ++s) values_[(s * N_ + i) * d_ + a] -= mean;
    }
  set_normalization(Mat::Identity(static_cast<Eigen::Index>(d_), static_cast<Eigen::Index>(d_)));
}

bool EnsembleMatrix::all_zero() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

void EnsembleMatrix::set_normalization(const Mat& b) {
  if (b.rows() != static_cast<Eigen::Index>(d_) || b.cols() != static_cast<Eigen::Index>(d_))
    throw DomainError("normalization has the wrong shape");
  b_inv_ = checked_inverse(b);
  b_ = b;
}

namespace {

// Weighted second moment of per-sample vectors v(s) (d entries each).
template <class F>
Mat weighted_outer(const EnsembleMatrix& ens, F&& v) {
  const std::size_t d = ens.dim();
  const std::size_t S = ens.samples();
  Mat out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  std::vector<Vec> rows(S);
  for (std::size_t s = 0; s < S; ++s) rows[s] = v(s);
  std::vector<double> terms(S);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t c = a; c < d; ++c) {
      for (std::size_t s = 0; s < S; ++s)
        terms[s] = ens.weight(s) * rows[s](static_cast<Eigen::Index>(a)) * rows[s](static_cast<Eigen::Index>(c));
      const double m = pairwise_sum(terms.begin(), terms.end());
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) = m;
      out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)) = m;
    }
  return out;
}

Vec raw_sum(const EnsembleMatrix& ens, std::size_t s) {
  Vec v = Vec::Zero(static_cast<Eigen::Index>(ens.dim()));
  for (std::size_t i = 0; i < ens.steps(); ++i)
    v += Eigen::Map<const Vec>(ens.at(s, i), static_cast<Eigen::Index>(ens.dim()));
  return v;
}

}  // namespace

Mat EnsembleMatrix::sum_covariance() const {
  return weighted_outer(*this, [&](std::size_t s) { return raw_sum(*this, s); });
}

Mat EnsembleMatrix::w_covariance() const {
  return weighted_outer(*this, [&](std::size_t s) -> Vec { return b_inv_ * raw_sum(*this, s); });
}

namespace {

// Normalized summands Y_i = b^{-1} fbar^i of one row with prefix and suffix
// sums, so that W^{n,m} = L[max(0, n-m)] + R[min(N, n+m+1)] and the fully
// punctured sum is exactly zero.
struct Row {
  std::size_t N = 0, d = 0;
  std::vector<double> Y, L, R, W;

  Row(const EnsembleMatrix& ens, std::size_t s) : N(ens.steps()), d(ens.dim()) {
    Y.assign(N * d, 0.0);
    const Mat& bi = ens.b_inverse();
    for (std::size_t i = 0; i < N; ++i) {
      const double* f = ens.at(s, i);
      for (std::size_t a = 0; a < d; ++a) {
        double v = 0.0;
        for (std::size_t c = 0; c < d; ++c)
          v += bi(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) * f[c];
        Y[i * d + a] = v;
      }
    }
    L.assign((N + 1) * d, 0.0);
    R.assign((N + 1) * d, 0.0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t a = 0; a < d; ++a) L[(i + 1) * d + a] = L[i * d + a] + Y[i * d + a];
    for (std::size_t i = N; i-- > 0;)
      for (std::size_t a = 0; a < d; ++a) R[i * d + a] = R[(i + 1) * d + a] + Y[i * d + a];
    W.assign(L.begin() + static_cast<std::ptrdiff_t>(N * d), L.end());
  }

  void punctured(std::size_t n, long m, double* out) const {
    if (m < 0) {
      std::copy(W.begin(), W.end(), out);
      return;
    }
    const auto um = static_cast<std::size_t>(m);
    const std::size_t lo = n >= um ? n - um : 0;
    const std::size_t hi = std::min(N, n + um + 1);
    for (std::size_t a = 0; a < d; ++a) out[a] = L[lo * d + a] + R[hi * d + a];
  }

  // Returns false when the ring {|i - n| = m} is empty.
  bool ring(std::size_t n, std::size_t m, double* out) const {
    std::fill(out, out + d, 0.0);
    bool any = false;
    if (m == 0) {
      std::copy(Y.begin() + static_cast<std::ptrdiff_t>(n * d), Y.begin() + static_cast<std::ptrdiff_t>((n + 1) * d), out);
      return true;
    }
    if (n >= m) {
      for (std::size_t a = 0; a < d; ++a) out[a] += Y[(n - m) * d + a];
      any = true;
    }
    if (n + m < N) {
      for (std::size_t a = 0; a < d; ++a) out[a] += Y[(n + m) * d + a];
      any = true;
    }
    return any;
  }
};

double quad_form(const double* x, const double* M, const double* y, std::size_t d) {
  double s = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    double r = 0.0;
    for (std::size_t c = 0; c < d; ++c) r += M[a * d + c] * y[c];
    s += x[a] * r;
  }
  return s;
}

void check_index(const EnsembleMatrix& ens, std::size_t sample, std::size_t n, long m) {
  if (sample >= ens.samples()) throw IndexError("sample index out of range");
  if (n >= ens.steps()) throw IndexError("time index n out of range");
  if (m < -1 || m > static_cast<long>(ens.steps()) - 1) throw IndexError("puncture radius out of range");
}

}  // namespace

PuncturedSums punctured(const EnsembleMatrix& ens, std::size_t sample, std::size_t n, long m) {
  check_index(ens, sample, n, m);
  const Row row(ens, sample);
  const auto d = static_cast<Eigen::Index>(ens.dim());
  PuncturedSums out{Vec(d), Vec(d), Vec::Zero(d)};
  std::copy(row.W.begin(), row.W.end(), out.W.data());
  row.punctured(n, m, out.Wnm.data());
  if (m >= 0) row.ring(n, static_cast<std::size_t>(m), out.Ynm.data());
  return out;
}

Potential potential_of(const SteinSolution& sol) {
  return Potential{sol.dim(), [&sol](const double* w, double* g, double* H) { sol.derivatives(w, g, H); }};
}

Mat delta(const SteinSolution& sol, const EnsembleMatrix& ens, std::size_t sample, std::size_t n, long k, double u) {
  if (ens.dim() != sol.dim()) throw DomainError("solution and ensemble dimensions differ");
  if (k < 0) throw IndexError("delta needs k >= 0");
  const PuncturedSums p = punctured(ens, sample, n, k);
  const Vec shifted = p.Wnm + u * p.Ynm;
  return solve_stein_at(sol, shifted).hess - solve_stein_at(sol, p.Wnm).hess;
}

double DecompositionLedger::sum() const {
  double s = 0.0;
  for (double e : E) s += e;
  return s;
}

void DecompositionLedger::write_csv(std::ostream& os, const std::string& config_hash) const {
  const bool tag = !config_hash.empty();
  os << "term,value,stderr" << (tag ? ",config_hash" : "") << '\n';
  auto row = [&](const std::string& name, double v, double e) {
    std::vector<std::string> f{name, csv_double(v), csv_double(e)};
    if (tag) f.push_back(config_hash);
    os << csv_line(f) << '\n';
  };
  for (int i = 0; i < 7; ++i) row("E" + std::to_string(i + 1), E[i], se[i]);
  row("LHS", lhs, lhs_se);
  row("residual", residual, residual_se);
}

namespace {

constexpr std::size_t kDecompBlock = 64;
constexpr std::size_t kTerms = 9;  // E1..E7, LHS, residual

}  // namespace

DecompositionLedger decompose(const EnsembleMatrix& ens, const Potential& A, UQuadrature uq, std::size_t threads) {
  if (A.dim != ens.dim()) throw DomainError("potential and ensemble dimensions differ");
  if (uq.order < 1 || uq.panels < 1) throw DomainError("u-quadrature needs at least one node");
  DecompositionLedger out;
  out.samples = ens.samples();
  out.exhaustive = ens.exhaustive();
  if (ens.all_zero()) return out;

  const std::size_t S = ens.samples(), N = ens.steps(), d = ens.dim(), dd = d * d;
  const Mat sigma = ens.w_covariance();
  const QuadratureRule rule = composite_gauss_legendre(uq.order, uq.panels, 0.0, 1.0);
  threads = resolve_threads(threads);

  std::vector<double> H0(dd), g0(d);
  {
    const std::vector<double> zero(d, 0.0);
    A.derivatives(zero.data(), g0.data(), H0.data());
  }

  // Pass 1: LHS, E1, E2, the uncentered parts of E3..E5 and mu(delta^{n,k}).
  const std::size_t blocks = (S + kDecompBlock - 1) / kDecompBlock;
  std::vector<std::vector<double>> mu_delta_part(blocks, std::vector<double>(N * N * dd, 0.0));
  std::vector<double> terms(S * kTerms, 0.0);
  parallel_for(blocks, threads, [&](std::size_t blk) {
    std::vector<double> H((N + 1) * N * dd), Wnm(d), Y(d), Yn(d), gW(d), HW(dd), p(d), Hu(dd), g(d), dsum(dd);
    std::vector<double>& part = mu_delta_part[blk];
    const std::size_t last = std::min(S, (blk + 1) * kDecompBlock);
    for (std::size_t s = blk * kDecompBlock; s < last; ++s) {
      const Row row(ens, s);
      const double w = ens.weight(s);
      double* t = &terms[s * kTerms];
      A.derivatives(row.W.data(), gW.data(), HW.data());
      double trace = 0.0, wg = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        wg += row.W[a] * gW[a];
        for (std::size_t c = 0; c < d; ++c)
          trace += sigma(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) * HW[c * d + a];
      }
      t[7] = trace - wg;
      // H[n][m + 1] = D^2A(W^{n,m}), m = -1..N-1
      for (std::size_t n = 0; n < N; ++n) {
        double* Hn = &H[n * (N + 1) * dd];
        std::copy(HW.begin(), HW.end(), Hn);
        for (std::size_t m = 0; m < N; ++m) {
          row.punctured(n, static_cast<long>(m), Wnm.data());
          double* Hm = Hn + (m + 1) * dd;
          if (std::all_of(Wnm.begin(), Wnm.end(), [](double v) { return v == 0.0; }))
            std::copy(H0.begin(), H0.end(), Hm);
          else
            A.derivatives(Wnm.data(), g.data(), Hm);
        }
      }
      for (std::size_t n = 0; n < N; ++n) {
        const double* Hn = &H[n * (N + 1) * dd];
        row.ring(n, 0, Yn.data());
        // E1, E2: u-integrals of delta^{n,m}(u)
        for (std::size_t m = 0; m < N; ++m) {
          if (!row.ring(n, m, Y.data())) continue;
          row.punctured(n, static_cast<long>(m), Wnm.data());
          const double* Hm = Hn + (m + 1) * dd;
          double integral = 0.0;
          for (std::size_t q = 0; q < rule.size(); ++q) {
            for (std::size_t a = 0; a < d; ++a) p[a] = Wnm[a] + rule.nodes[q] * Y[a];
            A.derivatives(p.data(), g.data(), Hu.data());
            for (std::size_t e = 0; e < dd; ++e) Hu[e] -= Hm[e];
            integral += rule.weights[q] * quad_form(Yn.data(), Hu.data(), Y.data(), d);
          }
          t[m == 0 ? 1 : 0] -= integral;
        }
        // delta^{n,k} = H^{n,k-1} - H^{n,k}
        for (std::size_t k = 0; k < N; ++k) {
          double* mu = &part[(n * N + k) * dd];
          for (std::size_t e = 0; e < dd; ++e) mu[e] += w * (Hn[k * dd + e] - Hn[(k + 1) * dd + e]);
        }
        // Uncentered E5: k = 1..N-1 against Y^n.
        for (std::size_t k = 1; k < N; ++k) {
          for (std::size_t e = 0; e < dd; ++e) dsum[e] = Hn[k * dd + e] - Hn[(k + 1) * dd + e];
          t[4] -= quad_form(Yn.data(), dsum.data(), Yn.data(), d);
        }
        // Uncentered E3 (k = m+1..2m) and E4 (k = 2m+1..N-1); sum_{k=a}^{b} delta^{n,k}
        // telescopes to H^{n,a-1} - H^{n,b}.
        for (std::size_t m = 1; m < N; ++m) {
          if (!row.ring(n, m, Y.data())) continue;
          const std::size_t mid = std::min(2 * m, N - 1);
          if (mid >= m + 1) {
            for (std::size_t e = 0; e < dd; ++e) dsum[e] = Hn[(m + 1) * dd + e] - Hn[(mid + 1) * dd + e];
            t[2] -= quad_form(Yn.data(), dsum.data(), Y.data(), d);
          }
          if (2 * m + 1 <= N - 1) {
            for (std::size_t e = 0; e < dd; ++e) dsum[e] = Hn[(2 * m + 1) * dd + e] - Hn[N * dd + e];
            t[3] -= quad_form(Yn.data(), dsum.data(), Y.data(), d);
          }
        }
      }
    }
  });
  std::vector<double> mu_delta(N * N * dd, 0.0);
  for (const auto& part : mu_delta_part)
    for (std::size_t e = 0; e < mu_delta.size(); ++e) mu_delta[e] += part[e];

  // Cumulative sums over k of mu(delta^{n,k}): C[n][j] = sum_{k<j}.
  std::vector<double> C(N * (N + 1) * dd, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < N; ++k)
      for (std::size_t e = 0; e < dd; ++e)
        C[(n * (N + 1) + k + 1) * dd + e] = C[(n * (N + 1) + k) * dd + e] + mu_delta[(n * N + k) * dd + e];
  auto range_sum = [&](std::size_t n, std::size_t a, std::size_t b, double* out) {  // k = a..b
    for (std::size_t e = 0; e < dd; ++e) out[e] = C[(n * (N + 1) + b + 1) * dd + e] - C[(n * (N + 1) + a) * dd + e];
  };

  // The centered terms are linear in mu(delta), which is itself an ensemble
  // mean, so their per-sample values alone understate the sampling error.
  // Pass 2 also accumulates P[j][n][k] = E[d term / d mu(delta^{n,k})] for the
  // five centered terms (E3..E7); pass 3 feeds each sample's delta through it
  // to form the influence function used for the standard errors.
  const bool want_se = !ens.exhaustive();
  constexpr std::size_t kCentered = 5;  // terms 2..6
  const std::size_t pstride = N * (N + 1) * dd;
  const std::size_t chunks = std::min<std::size_t>(blocks, 64);
  std::vector<std::vector<double>> P_part(want_se ? chunks : 0, std::vector<double>(kCentered * pstride, 0.0));
  // Difference array over k: add YnY^T on [a, b].
  auto add_range = [&](double* P, std::size_t j, std::size_t n, std::size_t a, std::size_t b, const double* x,
                       const double* y, double w) {
    double* lo = P + j * pstride + (n * (N + 1) + a) * dd;
    double* hi = P + j * pstride + (n * (N + 1) + b + 1) * dd;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        lo[r * d + c] += w * x[r] * y[c];
        hi[r * d + c] -= w * x[r] * y[c];
      }
  };

  // Pass 2: centering corrections for E3..E5, and E6, E7.
  parallel_for(want_se ? chunks : blocks, threads, [&](std::size_t chunk) {
    std::vector<double> Y(d), Yn(d), M(dd);
    const std::size_t first_blk = want_se ? chunk * blocks / chunks : chunk;
    const std::size_t end_blk = want_se ? (chunk + 1) * blocks / chunks : chunk + 1;
    double* P = want_se ? P_part[chunk].data() : nullptr;
    const std::size_t last = std::min(S, end_blk * kDecompBlock);
    for (std::size_t s = first_blk * kDecompBlock; s < last; ++s) {
      const Row row(ens, s);
      const double w = ens.weight(s);
      double* t = &terms[s * kTerms];
      for (std::size_t n = 0; n < N; ++n) {
        row.ring(n, 0, Yn.data());
        if (N > 1) {
          range_sum(n, 1, N - 1, M.data());
          t[4] += quad_form(Yn.data(), M.data(), Yn.data(), d);
          if (P) add_range(P, 2, n, 1, N - 1, Yn.data(), Yn.data(), w);
        }
        t[6] += quad_form(Yn.data(), &mu_delta[(n * N) * dd], Yn.data(), d);
        if (P) add_range(P, 4, n, 0, 0, Yn.data(), Yn.data(), w);
        for (std::size_t m = 1; m < N; ++m) {
          if (!row.ring(n, m, Y.data())) continue;
          const std::size_t mid = std::min(2 * m, N - 1);
          if (mid >= m + 1) {
            range_sum(n, m + 1, mid, M.data());
            t[2] += quad_form(Yn.data(), M.data(), Y.data(), d);
            if (P) add_range(P, 0, n, m + 1, mid, Yn.data(), Y.data(), w);
          }
          if (2 * m + 1 <= N - 1) {
            range_sum(n, 2 * m + 1, N - 1, M.data());
            t[3] += quad_form(Yn.data(), M.data(), Y.data(), d);
            if (P) add_range(P, 1, n, 2 * m + 1, N - 1, Yn.data(), Y.data(), w);
          }
          range_sum(n, 0, m, M.data());
          t[5] += quad_form(Yn.data(), M.data(), Y.data(), d);
          if (P) add_range(P, 3, n, 0, m, Yn.data(), Y.data(), w);
        }
      }
      double e = 0.0;
      for (std::size_t i = 0; i < 7; ++i) e += t[i];
      t[8] = t[7] - e;
    }
  });

  // Pass 3: influence of each sample through mu(delta).
  std::vector<double> infl(want_se ? S * kTerms : 0, 0.0);
  if (want_se) {
    std::vector<double> Pbar(kCentered * pstride, 0.0);
    for (const auto& part : P_part)
      for (std::size_t e = 0; e < Pbar.size(); ++e) Pbar[e] += part[e];
    // Undo the difference encoding: P[j][n][k] for k = 0..N-1.
    for (std::size_t j = 0; j < kCentered; ++j)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 1; k <= N; ++k)
          for (std::size_t e = 0; e < dd; ++e)
            Pbar[j * pstride + (n * (N + 1) + k) * dd + e] += Pbar[j * pstride + (n * (N + 1) + k - 1) * dd + e];
    auto pairing = [&](std::size_t j, auto&& delta) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < N; ++k) {
          const double* Pk = &Pbar[j * pstride + (n * (N + 1) + k) * dd];
          const double* D = delta(n, k);
          for (std::size_t e = 0; e < dd; ++e) acc += Pk[e] * D[e];
        }
      return acc;
    };
    double offset[kCentered];
    for (std::size_t j = 0; j < kCentered; ++j)
      offset[j] = pairing(j, [&](std::size_t n, std::size_t k) { return &mu_delta[(n * N + k) * dd]; });
    parallel_for(blocks, threads, [&](std::size_t blk) {
      std::vector<double> H((N + 1) * N * dd), delta(N * N * dd), Wnm(d), g(d), HW(dd), gW(d);
      const std::size_t last = std::min(S, (blk + 1) * kDecompBlock);
      for (std::size_t s = blk * kDecompBlock; s < last; ++s) {
        const Row row(ens, s);
        A.derivatives(row.W.data(), gW.data(), HW.data());
        for (std::size_t n = 0; n < N; ++n) {
          double* Hn = &H[n * (N + 1) * dd];
          std::copy(HW.begin(), HW.end(), Hn);
          for (std::size_t m = 0; m < N; ++m) {
            row.punctured(n, static_cast<long>(m), Wnm.data());
            double* Hm = Hn + (m + 1) * dd;
            if (std::all_of(Wnm.begin(), Wnm.end(), [](double v) { return v == 0.0; }))
              std::copy(H0.begin(), H0.end(), Hm);
            else
              A.derivatives(Wnm.data(), g.data(), Hm);
          }
          for (std::size_t k = 0; k < N; ++k)
            for (std::size_t e = 0; e < dd; ++e) delta[(n * N + k) * dd + e] = Hn[k * dd + e] - Hn[(k + 1) * dd + e];
        }
        double* f = &infl[s * kTerms];
        for (std::size_t j = 0; j < kCentered; ++j) {
          f[j + 2] = pairing(j, [&](std::size_t n, std::size_t k) { return &delta[(n * N + k) * dd]; }) - offset[j];
          f[8] -= f[j + 2];
        }
      }
    });
  }

  std::vector<double> weighted(S), dev(S);
  auto mean_se = [&](std::size_t idx, double& mean, double& se) {
    for (std::size_t s = 0; s < S; ++s) weighted[s] = ens.weight(s) * terms[s * kTerms + idx];
    mean = pairwise_sum(weighted.begin(), weighted.end());
    se = 0.0;
    if (ens.exhaustive()) return;
    for (std::size_t s = 0; s < S; ++s) {
      const double w = ens.weight(s);
      const double r = terms[s * kTerms + idx] + infl[s * kTerms + idx] - mean;
      dev[s] = w * w * r * r;
    }
    se = std::sqrt(pairwise_sum(dev.begin(), dev.end()) * static_cast<double>(S) / static_cast<double>(S - 1));
  };
  for (std::size_t i = 0; i < 7; ++i) mean_se(i, out.E[i], out.se[i]);
  mean_se(7, out.lhs, out.lhs_se);
  mean_se(8, out.residual, out.residual_se);
  return out;
}

DecompositionLedger decompose(const EnsembleMatrix& ens, const SteinSolution& sol, UQuadrature uq,
                              std::size_t threads) {
  if (sol.dim() != ens.dim()) throw DomainError("solution and ensemble dimensions differ");
  if (!ens.all_zero()) {
    const Mat sigma = ens.w_covariance();
    const double gap = (sol.sigma() - sigma).cwiseAbs().maxCoeff();
    if (gap > 1e-8 * (1.0 + sigma.cwiseAbs().maxCoeff()))
      throw DomainError("Stein solution covariance differs from mu(W W^T) of the ensemble");
  }
  return decompose(ens, potential_of(sol), uq, threads);
}

DecompositionLedger decompose(const EnsembleMatrix& ens, const TestFunctionPtr& h, SteinQuadrature q,
                              UQuadrature uq, std::size_t threads) {
  if (!h || h->dim() != ens.dim()) throw DomainError("test function and ensemble dimensions differ");
  if (ens.all_zero()) {
    DecompositionLedger out;
    out.samples = ens.samples();
    out.exhaustive = ens.exhaustive();
    return out;
  }
  const Mat sigma = ens.w_covariance();
  if (min_eigenvalue(sigma) <= 1e-10 * std::max(1.0, sigma.cwiseAbs().maxCoeff()))
    throw NumericError("empirical covariance of W is singular; increase N or S");
  const SteinSolution sol(h, sigma, q);
  return decompose(ens, potential_of(sol), uq, threads);
}

double telescoping_defect(const EnsembleMatrix& ens, const Potential& A, std::size_t sample, std::size_t n) {
  check_index(ens, sample, n, 0);
  const std::size_t N = ens.steps(), d = ens.dim();
  const Row row(ens, sample);
  std::vector<double> p(d), g_prev(d), g(d), H(d * d), total(d, 0.0), gW(d), g0(d);
  A.derivatives(row.W.data(), gW.data(), H.data());
  std::vector<double> zero(d, 0.0);
  A.derivatives(zero.data(), g0.data(), H.data());
  g_prev = gW;
  for (std::size_t m = 0; m < N; ++m) {
    row.punctured(n, static_cast<long>(m), p.data());
    A.derivatives(p.data(), g.data(), H.data());
    for (std::size_t a = 0; a < d; ++a) total[a] += g_prev[a] - g[a];
    g_prev = g;
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < d; ++a) worst = std::max(worst, std::abs(total[a] - (gW[a] - g0[a])));
  return worst;
}

RhoModel RhoModel::geometric(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw DomainError("geometric rate must lie in (0,1)");
  RhoModel r;
  r.kind = Kind::Geometric;
  r.gamma = gamma;
  return r;
}

RhoModel RhoModel::intermittent(double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw DomainError("intermittent beta must lie in (0,1)");
  RhoModel r;
  r.kind = Kind::Intermittent;
  r.beta = beta;
  return r;
}

double RhoModel::operator()(std::size_t m) const {
  if (kind == Kind::Geometric) return std::pow(gamma, static_cast<double>(m));
  if (m <= 1) return 1.0;
  const double x = static_cast<double>(m);
  return std::pow(x, 1.0 - 1.0 / beta) * std::pow(std::log(x), 1.0 / beta);
}

std::string RhoModel::describe() const {
  std::ostringstream os;
  if (kind == Kind::Geometric)
    os << "geometric(" << gamma << ")";
  else
    os << "intermittent(" << beta << ")";
  return os.str();
}

namespace {

double weighted_mean_se(const EnsembleMatrix& ens, const std::vector<double>& v, double& se) {
  const std::size_t S = v.size();
  std::vector<double> t(S);
  for (std::size_t s = 0; s < S; ++s) t[s] = ens.weight(s) * v[s];
  const double mean = pairwise_sum(t.begin(), t.end());
  se = 0.0;
  if (!ens.exhaustive()) {
    for (std::size_t s = 0; s < S; ++s) {
      const double w = ens.weight(s);
      t[s] = w * w * (v[s] - mean) * (v[s] - mean);
    }
    se = std::sqrt(pairwise_sum(t.begin(), t.end()) * static_cast<double>(S) / static_cast<double>(S - 1));
  }
  return mean;
}

// Unnormalized sums over {|i - n| > k} and {|i - n| = m} for one sample.
Vec outside_sum(const EnsembleMatrix& ens, std::size_t s, std::size_t n, std::size_t k) {
  Vec v = Vec::Zero(static_cast<Eigen::Index>(ens.dim()));
  for (std::size_t i = 0; i < ens.steps(); ++i) {
    const std::size_t gap = i > n ? i - n : n - i;
    if (gap > k) v += Eigen::Map<const Vec>(ens.at(s, i), v.size());
  }
  return v;
}

Vec ring_sum(const EnsembleMatrix& ens, std::size_t s, std::size_t n, std::size_t m) {
  Vec v = Vec::Zero(static_cast<Eigen::Index>(ens.dim()));
  for (std::size_t i = 0; i < ens.steps(); ++i) {
    const std::size_t gap = i > n ? i - n : n - i;
    if (gap == m) v += Eigen::Map<const Vec>(ens.at(s, i), v.size());
  }
  return v;
}

ConditionEstimate condition_A23(const EnsembleMatrix& ens, const TestFunction& h, const Mat& b, std::size_t n,
                                std::size_t m, std::size_t k, const std::vector<GhParams>& probes, double envelope,
                                bool centered, const ConditionOptions& opt) {
  if (h.dim() != ens.dim()) throw DomainError("test function and ensemble dimensions differ");
  if (n >= ens.steps() || k >= ens.steps()) throw IndexError("condition indices out of range");
  const std::size_t S = ens.samples();
  const auto d = static_cast<Eigen::Index>(ens.dim());
  std::vector<Vec> xs(S), ys(S), fn(S), fm(S);
  for (std::size_t s = 0; s < S; ++s) {
    xs[s] = outside_sum(ens, s, n, k);
    ys[s] = ring_sum(ens, s, n, k);
    fn[s] = Eigen::Map<const Vec>(ens.at(s, n), d);
    fm[s] = ring_sum(ens, s, n, m);
  }
  // Points for the sup norms: ensemble x values, and y values from the
  // ensemble plus uniform draws in B(0, 4M + 1).
  const std::size_t P = std::min(opt.norm_points, S);
  std::vector<Vec> nx, ny;
  Rng rng(opt.seed, 0xA23);
  for (std::size_t j = 0; j < P; ++j) {
    const std::size_t s = (j * S) / P;
    nx.push_back(xs[s]);
    ny.push_back(ys[s]);
    Vec dir(d);
    for (Eigen::Index a = 0; a < d; ++a) dir(a) = rng.normal();
    const double r = (4.0 * ens.bound() + 1.0) * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
    if (dir.norm() > 0.0) ny.push_back(r * dir / dir.norm());
  }

  ConditionEstimate best;
  std::vector<double> ratios(probes.size(), 0.0), values(probes.size(), 0.0), ses(probes.size(), 0.0);
  parallel_for(probes.size(), resolve_threads(opt.threads), [&](std::size_t p) {
    const GhParams& prm = probes[p];
    if (prm.z.size() != d) throw DomainError("probe dimension mismatch");
    std::vector<Mat> G(S);
    for (std::size_t s = 0; s < S; ++s) G[s] = g_h_evaluate(h, b, prm, xs[s], ys[s]);
    if (centered) {
      Mat mean = Mat::Zero(d, d);
      for (std::size_t s = 0; s < S; ++s) mean += ens.weight(s) * G[s];
      for (auto& g : G) g -= mean;
    }
    std::vector<double> v(S);
    for (std::size_t s = 0; s < S; ++s) v[s] = fn[s].dot(G[s] * fm[s]);
    double se = 0.0;
    const double num = std::abs(weighted_mean_se(ens, v, se));
    const GhNorms norms = g_h_norms(h, b, prm, nx, ny);
    const double denom = (norms.sup + norms.grad_sup) * envelope;
    values[p] = num;
    ses[p] = se;
    ratios[p] = denom > 0.0 ? num / denom : 0.0;
  });
  for (std::size_t p = 0; p < probes.size(); ++p)
    if (p == 0 || ratios[p] > best.ratio) {
      best.ratio = ratios[p];
      best.value = values[p];
      best.standard_error = ses[p];
      best.worst_probe = p;
    }
  return best;
}

}  // namespace

ConditionEstimate estimate_condition_A1(const EnsembleMatrix& ens, std::size_t n, std::size_t m, std::size_t alpha,
                                        std::size_t beta, const RhoModel& rho, double C1) {
  if (n >= ens.steps() || m >= ens.steps()) throw IndexError("time index out of range");
  if (alpha >= ens.dim() || beta >= ens.dim()) throw IndexError("component index out of range");
  std::vector<double> v(ens.samples());
  for (std::size_t s = 0; s < ens.samples(); ++s) v[s] = ens.at(s, n)[alpha] * ens.at(s, m)[beta];
  ConditionEstimate out;
  out.value = std::abs(weighted_mean_se(ens, v, out.standard_error));
  const double env = C1 * rho(n > m ? n - m : m - n);
  out.ratio = env > 0.0 ? out.value / env : 0.0;
  return out;
}

std::vector<GhParams> latin_hypercube_probes(std::size_t d, std::size_t count, std::uint64_t seed, double zmax) {
  Rng rng(seed, 0x1A7);
  const std::size_t D = d + 2;
  std::vector<std::vector<double>> cols(D, std::vector<double>(count));
  for (auto& col : cols) {
    std::vector<std::size_t> perm(count);
    for (std::size_t i = 0; i < count; ++i) perm[i] = i;
    for (std::size_t i = count; i-- > 1;) std::swap(perm[i], perm[rng.bits() % (i + 1)]);
    for (std::size_t i = 0; i < count; ++i)
      col[i] = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(count);
  }
  std::vector<GhParams> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i].s = cols[0][i];
    out[i].t = cols[1][i];
    out[i].z = Vec(static_cast<Eigen::Index>(d));
    for (std::size_t a = 0; a < d; ++a) out[i].z(static_cast<Eigen::Index>(a)) = zmax * (2.0 * cols[2 + a][i] - 1.0);
  }
  return out;
}

ConditionEstimate estimate_condition_A2(const EnsembleMatrix& ens, const TestFunction& h, const Mat& b, std::size_t n,
                                        std::size_t m, std::size_t k, const std::vector<GhParams>& probes,
                                        const RhoModel& rho, ConditionOptions opt) {
  if (m > k) throw DomainError("condition A2 needs m <= k");
  return condition_A23(ens, h, b, n, m, k, probes, rho(m), false, opt);
}

ConditionEstimate estimate_condition_A3(const EnsembleMatrix& ens, const TestFunction& h, const Mat& b, std::size_t n,
                                        std::size_t m, std::size_t k, const std::vector<GhParams>& probes,
                                        const RhoModel& rho, ConditionOptions opt) {
  if (2 * m > k || k == 0) throw DomainError("condition A3 needs 2m <= k and k >= 1");
  return condition_A23(ens, h, b, n, m, k, probes, rho(k - m), true, opt);
}

}  // namespace steinmc
