#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

#include "steinmc/dynamics.hpp"

namespace steinmc {

// Piecewise-constant density on G uniform cells of [0,1].
class DensityVector {
 public:
  DensityVector() = default;
  explicit DensityVector(std::vector<double> values);
  static DensityVector uniform(std::size_t cells);
  // Cell averages of an integrable function, by G-point Gauss rule per cell.
  template <class F>
  static DensityVector from_function(std::size_t cells, F f);

  std::size_t size() const { return values_.size(); }
  double width() const { return 1.0 / static_cast<double>(values_.size()); }
  double midpoint(std::size_t i) const { return (static_cast<double>(i) + 0.5) * width(); }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double mass() const;
  bool is_uniform() const { return uniform_; }

  DensityVector normalized() const;
  // Inverse CDF with linear interpolation inside cells; u in [0,1).
  double quantile(double u) const;
  // Integral of g against the density, g evaluated at cell midpoints.
  double integrate_midpoint(const std::vector<double>& g_at_midpoints) const;

  void write_csv(std::ostream& os) const;
  static DensityVector read_csv(std::istream& is);

 private:
  void build_cdf();

  std::vector<double> values_;
  std::vector<double> cdf_;
  bool uniform_ = false;
};

template <class F>
DensityVector DensityVector::from_function(std::size_t cells, F f) {
  static const double nodes[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
  static const double weights[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
  std::vector<double> v(cells);
  const double h = 1.0 / static_cast<double>(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    const double mid = (static_cast<double>(i) + 0.5) * h;
    double s = 0.0;
    for (int q = 0; q < 3; ++q) s += weights[q] * f(mid + 0.5 * h * nodes[q]);
    v[i] = s;
  }
  return DensityVector(std::move(v));
}

struct UlamOperator {
  std::size_t grid = 0;
  // P(i,j) = m(cell_i ∩ T^{-1} cell_j) / m(cell_i)
  Eigen::SparseMatrix<double, Eigen::RowMajor> P;

  double max_row_sum_error() const;
  // Density pushforward: (P^T v)_j = sum_i v_i P(i,j).
  DensityVector push(const DensityVector& h) const;
};

UlamOperator build_ulam(const IntervalMap& map, std::size_t grid, std::size_t threads = 1);

struct InvariantDensityOptions {
  double tolerance = 1e-12;
  std::size_t max_iterations = 200000;
};

DensityVector invariant_density(const UlamOperator& op, const InvariantDensityOptions& opts = {});

// ||P^T h - h||_1
double fixed_point_residual(const UlamOperator& op, const DensityVector& h);

struct ConeReport {
  double alpha = 0.0;
  // Worst relative drop violation: min_i (f_i - f_{i+1}) / f_i.
  double decreasing_margin = 0.0;
  // min_i (g_{i+1} - g_i) / g_{i+1} with g = x^{alpha+1} f at midpoints.
  double weighted_increasing_margin = 0.0;
  // min_i (cell average of 2^a (2+a) x^{-a} m(f)) - f_i.
  double bound_margin = 0.0;
  std::size_t decreasing_worst_cell = 0;
  std::size_t weighted_worst_cell = 0;
  std::size_t bound_worst_cell = 0;
  double tolerance = 0.0;
  bool decreasing_ok = false;
  bool weighted_increasing_ok = false;
  bool bound_ok = false;
  bool passed() const { return decreasing_ok && weighted_increasing_ok && bound_ok; }
};

// Cone conditions for C_*(alpha), evaluated between adjacent cells. A
// monotonicity margin passes when it is at least -tolerance; the default
// tolerance admits one-cell discretization artifacts of order 1/G.
ConeReport cone_check(const DensityVector& h, double alpha, double tolerance = -1.0);

struct CorrelationEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t samples = 0;
};

// Monte Carlo estimate of mu(fbar^n gbar^m) for scalar components fa of f
// and gb of g, with initial points drawn from mu0 and plug-in centering.
CorrelationEstimate correlation_estimate(const MapSequence& seq, const Observable& f, const Observable& g,
                                         std::size_t n, std::size_t m, const DensityVector& mu0,
                                         std::size_t samples, std::uint64_t seed, std::size_t fa = 0,
                                         std::size_t gb = 0, std::size_t threads = 1);

// Same correlation computed by transporting densities with Ulam operators
// of each map in the sequence (row horizon max(n,m)).
double correlation_ulam(const MapSequence& seq, const Observable& f, const Observable& g, std::size_t n,
                        std::size_t m, const DensityVector& mu0, std::size_t grid, std::size_t fa = 0,
                        std::size_t gb = 0);

// Density of mu0 after maps 1..k of row `horizon`.
DensityVector pushforward(const MapSequence& seq, const DensityVector& mu0, std::size_t k, std::size_t horizon,
                          std::size_t grid);

struct VariationReport {
  // Sum over branches of T^n of the variation of 1/|(T^n)'| inside each branch.
  double branch_variation_sum = 0.0;
  // Sum of |jumps| of 1/|(T^n)'| across interior branch boundaries.
  double boundary_jump_sum = 0.0;
  double max_inverse_derivative = 0.0;
  std::size_t branches = 0;
};

// Piecewise linear sequences only; maps 1..n of row n (or of the horizon
// for prefix-consistent sequences).
VariationReport variation_diagnostic(const MapSequence& seq, std::size_t n, std::size_t max_branches = 1u << 22);
VariationReport variation_diagnostic(const IntervalMap& map, std::size_t n, std::size_t max_branches = 1u << 22);

}  // namespace steinmc
