#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "steinmc/rng.hpp"

namespace steinmc {

// A self-map of [0,1]: either the LSV intermittent map
//   T(x) = x(1 + (2x)^alpha) on [0,1/2),  2x - 1 on [1/2,1]
// or a piecewise linear expanding map. Branch j of a piecewise linear map
// covers [c_j, c_{j+1}) and acts as x -> slope_j (x - c_j) mod 1.
class IntervalMap {
 public:
  enum class Kind { LSV, PiecewiseLinear };

  static IntervalMap lsv(double alpha);
  static IntervalMap piecewise_linear(std::vector<double> slopes, std::vector<double> breakpoints = {});
  static IntervalMap linear_mod1(double slope) { return piecewise_linear({slope}); }

  Kind kind() const { return kind_; }
  double alpha() const { return alpha_; }
  const std::vector<double>& slopes() const { return slopes_; }
  // Branch endpoints 0 = c_0 < c_1 < ... < c_B = 1.
  const std::vector<double>& edges() const { return edges_; }
  std::size_t branch_count() const { return kind_ == Kind::LSV ? 2 : slopes_.size(); }

  double operator()(double x) const;

  // Unchecked evaluation for x already known to lie in [0,1].
  double step(double x) const {
    if (kind_ == Kind::LSV) {
      if (x >= 0.5) return 2.0 * x - 1.0;
      return alpha_ == 0.0 ? 2.0 * x : x * (1.0 + std::pow(2.0 * x, alpha_));
    }
    return step_linear(x);
  }

  // True when the map is exactly x -> 2x mod 1, which discards one mantissa
  // bit per step in floating point.
  bool is_doubling() const { return doubling_; }

  std::string describe() const;

 private:
  double step_linear(double x) const;

  Kind kind_ = Kind::LSV;
  double alpha_ = 0.0;
  std::vector<double> slopes_;
  std::vector<double> edges_;
  bool doubling_ = false;
};

double apply_map(const IntervalMap& map, double x);

// How a scalar parameter selects a map: LSV(alpha), or the slope family
// x -> (base + omega) x mod 1.
struct MapFamily {
  enum class Kind { LSV, SlopeShift };
  Kind kind = Kind::LSV;
  double base_slope = 2.0;

  static MapFamily lsv() { return {Kind::LSV, 2.0}; }
  static MapFamily slope_shift(double base = 2.0) { return {Kind::SlopeShift, base}; }

  IntervalMap make(double parameter) const;
  std::string name() const;
};

// Limit curve of a quasistatic system, t in [0,1].
class Curve {
 public:
  static Curve constant(double value);
  // Linear interpolation through (t_i, v_i); t must start at 0 and end at 1.
  static Curve piecewise_linear(std::vector<double> t, std::vector<double> values);
  static Curve linear(double a, double b) { return piecewise_linear({0.0, 1.0}, {a, a + b}); }

  double operator()(double t) const;
  const std::vector<double>& knots() const { return t_; }
  const std::vector<double>& values() const { return v_; }
  double max_value() const;

 private:
  std::vector<double> t_;
  std::vector<double> v_;
};

// Random parameter stream. IID draws are uniform on [lo, hi]; the Markov
// driver is a lazy chain on an equispaced grid over [lo, hi] that keeps its
// state with probability `stay` and otherwise resamples uniformly, so
// correlations decay like stay^k.
class ParameterDriver {
 public:
  enum class Kind { IID, MarkovMixing };

  static ParameterDriver iid(double lo, double hi, std::uint64_t seed);
  static ParameterDriver markov(double lo, double hi, std::size_t states, double stay, std::uint64_t seed);
  static ParameterDriver constant(double value, std::uint64_t seed = 0) { return iid(value, value, seed); }

  Kind kind() const { return kind_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  std::size_t states() const { return states_; }
  double stay() const { return stay_; }
  std::uint64_t seed() const { return seed_; }
  ParameterDriver with_seed(std::uint64_t seed) const;

  // k-th draw, k >= 0. O(1) for IID, O(k) for the Markov chain.
  double draw(std::size_t k) const;
  // Draws 0..count-1.
  std::vector<double> draws(std::size_t count) const;

 private:
  double grid_value(std::size_t state) const;

  Kind kind_ = Kind::IID;
  double lo_ = 0.0;
  double hi_ = 0.0;
  std::size_t states_ = 1;
  double stay_ = 0.0;
  std::uint64_t seed_ = 0;
};

class MapSequence {
 public:
  enum class Mode { Sequential, Quasistatic, Random };

  static MapSequence sequential(MapFamily family, std::vector<double> params, double beta_star);
  static MapSequence quasistatic(MapFamily family, Curve curve, std::size_t horizon, double beta_star,
                                 double eta = 1.0);
  static MapSequence random(MapFamily family, ParameterDriver driver, double beta_star);

  Mode mode() const { return mode_; }
  const MapFamily& family() const { return family_; }
  double beta_star() const { return beta_star_; }
  std::size_t horizon() const { return horizon_; }
  double eta() const { return eta_; }
  const std::vector<double>& params() const { return params_; }
  const std::optional<Curve>& curve() const { return curve_; }
  const std::optional<ParameterDriver>& driver() const { return driver_; }

  // Parameter of the k-th map of the n-th row; only quasistatic rows depend on n.
  double parameter_at(std::size_t n, std::size_t k) const;
  // Parameters of maps 1..count in row n, i.e. entry j is parameter_at(n, j + 1).
  std::vector<double> step_parameters(std::size_t n, std::size_t count) const;
  // Row n's maps no longer depend on n (sequential and random modes), so
  // shorter horizons are prefixes of longer ones.
  bool prefix_consistent() const { return mode_ != Mode::Quasistatic; }

  IntervalMap map_at(std::size_t n, std::size_t k) const { return family_.make(parameter_at(n, k)); }

 private:
  Mode mode_ = Mode::Sequential;
  MapFamily family_;
  double beta_star_ = 0.0;
  std::size_t horizon_ = 0;
  double eta_ = 1.0;
  std::vector<double> params_;
  std::optional<Curve> curve_;
  std::optional<ParameterDriver> driver_;
};

double parameter_at(const MapSequence& seq, std::size_t n, std::size_t k);

// Bounded observable f : [0,1] -> R^d built from named scalar components:
// "id" (x), "x2" (x^2), "cos" (cos 2 pi x), "sin" (sin 2 pi x), "const" (1),
// "zero", "tent" (1 - |2x - 1|). A component may carry a scale, "2.5*id".
class Observable {
 public:
  using Fn = std::function<double(double)>;

  static Observable from_components(const std::vector<std::string>& names);
  static Observable identity() { return from_components({"id"}); }
  static Observable constant(double c);
  static Observable custom(std::vector<Fn> components, double lipschitz, double sup_bound,
                           std::vector<std::string> names = {});

  std::size_t dim() const { return fns_.size(); }
  double lipschitz() const { return lip_; }
  double sup_bound() const { return sup_; }
  const std::vector<std::string>& names() const { return names_; }

  void evaluate(double x, double* out) const {
    for (std::size_t a = 0; a < fns_.size(); ++a) out[a] = fns_[a](x);
  }
  std::vector<double> operator()(double x) const;

  // Largest |f(x) - f(y)| / |x - y| over adjacent points of a uniform grid,
  // measured componentwise in the Euclidean norm.
  double grid_lipschitz(std::size_t points = 4097) const;
  // Largest ||f(x)|| over the same grid.
  double grid_sup(std::size_t points = 4097) const;

 private:
  std::vector<Fn> fns_;
  std::vector<std::string> names_;
  double lip_ = 0.0;
  double sup_ = 0.0;
};

// y[0] = x0, y[k+1] = T_{N,k+1}(y[k]).
std::vector<double> trajectory(const MapSequence& seq, double x0, std::size_t steps);

// S_n(x,t) = sum_{k < floor(nt)} f_{n,k}(x) + (nt - floor(nt)) f_{n,floor(nt)}(x)
// with n the horizon of the quasistatic sequence.
std::vector<double> qds_birkhoff_integral(const MapSequence& seq, const Observable& f, double x, double t);

// Same integral for several t at once from a single orbit.
std::vector<std::vector<double>> qds_birkhoff_path(const MapSequence& seq, const Observable& f, double x,
                                                   const std::vector<double>& ts);

}  // namespace steinmc
