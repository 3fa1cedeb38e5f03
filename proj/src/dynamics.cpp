#include "steinmc/dynamics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "steinmc/errors.hpp"

namespace steinmc {

namespace {

void require_unit(double x, const char* what) {
  if (!(x >= 0.0 && x <= 1.0)) {
    std::ostringstream os;
    os << what << ": point " << x << " outside [0,1]";
    throw DomainError(os.str());
  }
}

}  // namespace

IntervalMap IntervalMap::lsv(double alpha) {
  // alpha = 1 is still a well-defined map (used as a hand-checkable case);
  // sequences enforce the stricter beta* < 1.
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("LSV parameter must lie in [0,1]");
  IntervalMap m;
  m.kind_ = Kind::LSV;
  m.alpha_ = alpha;
  m.edges_ = {0.0, 0.5, 1.0};
  m.doubling_ = alpha == 0.0;
  return m;
}

IntervalMap IntervalMap::piecewise_linear(std::vector<double> slopes, std::vector<double> breakpoints) {
  if (slopes.empty()) throw DomainError("piecewise linear map needs at least one branch");
  if (breakpoints.size() + 1 != slopes.size())
    throw DomainError("piecewise linear map needs exactly one breakpoint between consecutive branches");
  for (double s : slopes)
    if (!(s > 1.0) || !std::isfinite(s)) throw DomainError("piecewise linear slopes must exceed 1");
  double prev = 0.0;
  for (double c : breakpoints) {
    if (!(c > prev && c < 1.0)) throw DomainError("breakpoints must be strictly increasing in (0,1)");
    prev = c;
  }
  IntervalMap m;
  m.kind_ = Kind::PiecewiseLinear;
  m.slopes_ = std::move(slopes);
  m.edges_.reserve(m.slopes_.size() + 1);
  m.edges_.push_back(0.0);
  m.edges_.insert(m.edges_.end(), breakpoints.begin(), breakpoints.end());
  m.edges_.push_back(1.0);
  m.doubling_ = m.slopes_.size() == 1 && m.slopes_[0] == 2.0;
  return m;
}

double IntervalMap::step_linear(double x) const {
  std::size_t j = 0;
  const std::size_t last = slopes_.size() - 1;
  while (j < last && x >= edges_[j + 1]) ++j;
  const double v = slopes_[j] * (x - edges_[j]);
  double r = v - std::floor(v);
  if (r >= 1.0) r = 0.0;
  return r;
}

double IntervalMap::operator()(double x) const {
  require_unit(x, "apply_map");
  return step(x);
}

std::string IntervalMap::describe() const {
  std::ostringstream os;
  if (kind_ == Kind::LSV) {
    os << "LSV(alpha=" << alpha_ << ")";
  } else {
    os << "PiecewiseLinear(slopes=";
    for (std::size_t j = 0; j < slopes_.size(); ++j) os << (j ? "," : "") << slopes_[j];
    os << ")";
  }
  return os.str();
}

double apply_map(const IntervalMap& map, double x) { return map(x); }

IntervalMap MapFamily::make(double parameter) const {
  if (kind == Kind::LSV) return IntervalMap::lsv(parameter);
  return IntervalMap::linear_mod1(base_slope + parameter);
}

std::string MapFamily::name() const { return kind == Kind::LSV ? "lsv" : "slope_shift"; }

Curve Curve::constant(double value) { return piecewise_linear({0.0, 1.0}, {value, value}); }

Curve Curve::piecewise_linear(std::vector<double> t, std::vector<double> values) {
  if (t.size() < 2 || t.size() != values.size()) throw DomainError("curve needs matching knot and value lists");
  if (t.front() != 0.0 || t.back() != 1.0) throw DomainError("curve knots must span [0,1]");
  for (std::size_t i = 1; i < t.size(); ++i)
    if (!(t[i] > t[i - 1])) throw DomainError("curve knots must be strictly increasing");
  Curve c;
  c.t_ = std::move(t);
  c.v_ = std::move(values);
  return c;
}

double Curve::operator()(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("curve argument outside [0,1]");
  const auto it = std::upper_bound(t_.begin(), t_.end(), t);
  if (it == t_.end()) return v_.back();
  const auto i = static_cast<std::size_t>(it - t_.begin());
  const double w = (t - t_[i - 1]) / (t_[i] - t_[i - 1]);
  return v_[i - 1] + w * (v_[i] - v_[i - 1]);
}

double Curve::max_value() const { return *std::max_element(v_.begin(), v_.end()); }

ParameterDriver ParameterDriver::iid(double lo, double hi, std::uint64_t seed) {
  if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw DomainError("driver range must satisfy lo <= hi");
  ParameterDriver d;
  d.kind_ = Kind::IID;
  d.lo_ = lo;
  d.hi_ = hi;
  d.seed_ = seed;
  return d;
}

ParameterDriver ParameterDriver::markov(double lo, double hi, std::size_t states, double stay,
                                        std::uint64_t seed) {
  if (states < 2) throw DomainError("Markov driver needs at least two states");
  if (!(stay >= 0.0 && stay < 1.0)) throw DomainError("Markov stay probability must lie in [0,1)");
  ParameterDriver d = iid(lo, hi, seed);
  d.kind_ = Kind::MarkovMixing;
  d.states_ = states;
  d.stay_ = stay;
  return d;
}

ParameterDriver ParameterDriver::with_seed(std::uint64_t seed) const {
  ParameterDriver d = *this;
  d.seed_ = seed;
  return d;
}

double ParameterDriver::grid_value(std::size_t state) const {
  return lo_ + (hi_ - lo_) * static_cast<double>(state) / static_cast<double>(states_ - 1);
}

double ParameterDriver::draw(std::size_t k) const {
  if (kind_ == Kind::IID) return lo_ + (hi_ - lo_) * to_unit(stream_seed(seed_, k));
  return draws(k + 1).back();
}

std::vector<double> ParameterDriver::draws(std::size_t count) const {
  std::vector<double> out(count);
  if (kind_ == Kind::IID) {
    for (std::size_t k = 0; k < count; ++k) out[k] = draw(k);
    return out;
  }
  // Stationary start: the uniform law on the grid is invariant for this chain.
  std::size_t state = static_cast<std::size_t>(to_unit(stream_seed(seed_, 0)) * static_cast<double>(states_));
  for (std::size_t k = 0; k < count; ++k) {
    if (k > 0) {
      const std::uint64_t bits = stream_seed(seed_, k);
      if (to_unit(bits) >= stay_)
        state = static_cast<std::size_t>(to_unit(mix64(bits)) * static_cast<double>(states_));
    }
    out[k] = grid_value(std::min(state, states_ - 1));
  }
  return out;
}

MapSequence MapSequence::sequential(MapFamily family, std::vector<double> params, double beta_star) {
  MapSequence s;
  s.mode_ = Mode::Sequential;
  s.family_ = family;
  s.beta_star_ = beta_star;
  s.params_ = std::move(params);
  s.horizon_ = s.params_.empty() ? 0 : s.params_.size() - 1;
  if (family.kind == MapFamily::Kind::LSV && !(beta_star >= 0.0 && beta_star < 1.0))
    throw DomainError("beta* must lie in [0,1) for LSV sequences");
  if (family.kind == MapFamily::Kind::LSV)
    for (double a : s.params_)
      if (!(a >= 0.0 && a <= beta_star)) throw DomainError("sequence parameter outside [0, beta*]");
  return s;
}

MapSequence MapSequence::quasistatic(MapFamily family, Curve curve, std::size_t horizon, double beta_star,
                                     double eta) {
  if (family.kind == MapFamily::Kind::LSV && !(beta_star >= 0.0 && beta_star < 1.0))
    throw DomainError("beta* must lie in [0,1) for LSV sequences");
  if (horizon < 1) throw DomainError("quasistatic horizon must be positive");
  MapSequence s;
  s.mode_ = Mode::Quasistatic;
  s.family_ = family;
  s.beta_star_ = beta_star;
  s.horizon_ = horizon;
  s.eta_ = eta;
  s.curve_ = std::move(curve);
  return s;
}

MapSequence MapSequence::random(MapFamily family, ParameterDriver driver, double beta_star) {
  if (family.kind == MapFamily::Kind::LSV && !(beta_star >= 0.0 && beta_star < 1.0))
    throw DomainError("beta* must lie in [0,1) for LSV sequences");
  if (family.kind == MapFamily::Kind::LSV && (driver.lo() < 0.0 || driver.hi() > beta_star))
    throw DomainError("driver range must lie in [0, beta*]");
  if (family.kind == MapFamily::Kind::SlopeShift && driver.lo() < 0.0)
    throw DomainError("slope shifts must be nonnegative");
  MapSequence s;
  s.mode_ = Mode::Random;
  s.family_ = family;
  s.beta_star_ = beta_star;
  s.driver_ = std::move(driver);
  return s;
}

double MapSequence::parameter_at(std::size_t n, std::size_t k) const {
  if (k > n) throw IndexError("parameter_at: step index exceeds horizon");
  switch (mode_) {
    case Mode::Sequential:
      if (k >= params_.size()) throw IndexError("parameter_at: sequential parameter list too short");
      return params_[k];
    case Mode::Quasistatic: {
      const double t = static_cast<double>(k) / static_cast<double>(n);
      return std::clamp((*curve_)(t), 0.0, beta_star_);
    }
    case Mode::Random:
      return driver_->draw(k);
  }
  return 0.0;
}

std::vector<double> MapSequence::step_parameters(std::size_t n, std::size_t count) const {
  if (count > n) throw IndexError("step_parameters: count exceeds horizon");
  if (mode_ == Mode::Random) {
    auto all = driver_->draws(count + 1);
    return {all.begin() + 1, all.end()};
  }
  std::vector<double> out(count);
  for (std::size_t j = 0; j < count; ++j) out[j] = parameter_at(n, j + 1);
  return out;
}

double parameter_at(const MapSequence& seq, std::size_t n, std::size_t k) { return seq.parameter_at(n, k); }

namespace {

struct Component {
  Observable::Fn fn;
  double lip;
  double sup;
};

Component named_component(const std::string& spec) {
  double scale = 1.0;
  std::string name = spec;
  if (const auto star = spec.find('*'); star != std::string::npos) {
    const std::string head = spec.substr(0, star);
    const auto res = std::from_chars(head.data(), head.data() + head.size(), scale);
    if (res.ec != std::errc() || res.ptr != head.data() + head.size())
      throw DomainError("bad observable scale in '" + spec + "'");
    name = spec.substr(star + 1);
  }
  constexpr double two_pi = 2.0 * std::numbers::pi;
  Component c;
  if (name == "id") c = {[](double x) { return x; }, 1.0, 1.0};
  else if (name == "x2") c = {[](double x) { return x * x; }, 2.0, 1.0};
  else if (name == "cos") c = {[](double x) { return std::cos(two_pi * x); }, two_pi, 1.0};
  else if (name == "sin") c = {[](double x) { return std::sin(two_pi * x); }, two_pi, 1.0};
  else if (name == "const") c = {[](double) { return 1.0; }, 0.0, 1.0};
  else if (name == "zero") c = {[](double) { return 0.0; }, 0.0, 0.0};
  else if (name == "tent") c = {[](double x) { return 1.0 - std::abs(2.0 * x - 1.0); }, 2.0, 1.0};
  else throw DomainError("unknown observable component '" + name + "'");
  if (scale != 1.0) {
    auto inner = c.fn;
    c.fn = [inner, scale](double x) { return scale * inner(x); };
    c.lip *= std::abs(scale);
    c.sup *= std::abs(scale);
  }
  return c;
}

}  // namespace

Observable Observable::from_components(const std::vector<std::string>& names) {
  if (names.empty()) throw DomainError("observable needs at least one component");
  Observable o;
  double lip2 = 0.0, sup2 = 0.0;
  for (const auto& n : names) {
    Component c = named_component(n);
    o.fns_.push_back(std::move(c.fn));
    lip2 += c.lip * c.lip;
    sup2 += c.sup * c.sup;
  }
  o.names_ = names;
  o.lip_ = std::sqrt(lip2);
  o.sup_ = std::sqrt(sup2);
  return o;
}

Observable Observable::constant(double c) {
  std::ostringstream os;
  os.precision(17);
  os << c << "*const";
  return from_components({os.str()});
}

Observable Observable::custom(std::vector<Fn> components, double lipschitz, double sup_bound,
                              std::vector<std::string> names) {
  if (components.empty()) throw DomainError("observable needs at least one component");
  Observable o;
  o.fns_ = std::move(components);
  o.lip_ = lipschitz;
  o.sup_ = sup_bound;
  if (names.empty()) names.assign(o.fns_.size(), "custom");
  o.names_ = std::move(names);
  return o;
}

std::vector<double> Observable::operator()(double x) const {
  std::vector<double> out(dim());
  evaluate(x, out.data());
  return out;
}

double Observable::grid_lipschitz(std::size_t points) const {
  std::vector<double> a(dim()), b(dim());
  const double h = 1.0 / static_cast<double>(points - 1);
  evaluate(0.0, a.data());
  double worst = 0.0;
  for (std::size_t i = 1; i < points; ++i) {
    evaluate(static_cast<double>(i) * h, b.data());
    double d2 = 0.0;
    for (std::size_t c = 0; c < dim(); ++c) d2 += (b[c] - a[c]) * (b[c] - a[c]);
    worst = std::max(worst, std::sqrt(d2) / h);
    std::swap(a, b);
  }
  return worst;
}

double Observable::grid_sup(std::size_t points) const {
  std::vector<double> a(dim());
  double worst = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    evaluate(static_cast<double>(i) / static_cast<double>(points - 1), a.data());
    double n2 = 0.0;
    for (double v : a) n2 += v * v;
    worst = std::max(worst, std::sqrt(n2));
  }
  return worst;
}

std::vector<double> trajectory(const MapSequence& seq, double x0, std::size_t steps) {
  require_unit(x0, "trajectory");
  std::vector<double> y;
  y.reserve(steps + 1);
  y.push_back(x0);
  if (steps == 0) return y;
  const auto params = seq.step_parameters(steps, steps);
  for (std::size_t k = 0; k < steps; ++k) y.push_back(seq.family().make(params[k]).step(y.back()));
  return y;
}

std::vector<std::vector<double>> qds_birkhoff_path(const MapSequence& seq, const Observable& f, double x,
                                                   const std::vector<double>& ts) {
  require_unit(x, "qds_birkhoff_integral");
  const std::size_t n = seq.horizon();
  const std::size_t d = f.dim();
  std::size_t need = 0;
  for (double t : ts) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("qds_birkhoff_integral: t outside [0,1]");
    need = std::max(need, std::min(n, static_cast<std::size_t>(std::floor(static_cast<double>(n) * t))));
  }
  // Prefix sums P[k] = sum_{j<k} f_{n,j}(x), plus the values themselves.
  std::vector<double> values((need + 1) * d), prefix((need + 2) * d, 0.0);
  double y = x;
  for (std::size_t k = 0; k <= need; ++k) {
    if (k > 0) y = seq.family().make(seq.parameter_at(n, k)).step(y);
    f.evaluate(y, &values[k * d]);
    for (std::size_t a = 0; a < d; ++a) prefix[(k + 1) * d + a] = prefix[k * d + a] + values[k * d + a];
  }
  std::vector<std::vector<double>> out;
  out.reserve(ts.size());
  for (double t : ts) {
    const double nt = static_cast<double>(n) * t;
    const auto k = std::min(n, static_cast<std::size_t>(std::floor(nt)));
    const double frac = nt - static_cast<double>(k);
    std::vector<double> s(d);
    for (std::size_t a = 0; a < d; ++a) {
      s[a] = prefix[k * d + a];
      if (frac > 0.0) s[a] += frac * values[k * d + a];
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> qds_birkhoff_integral(const MapSequence& seq, const Observable& f, double x, double t) {
  if (seq.mode() != MapSequence::Mode::Quasistatic)
    throw UnsupportedError("qds_birkhoff_integral needs a quasistatic sequence");
  return qds_birkhoff_path(seq, f, x, {t}).front();
}

}  // namespace steinmc
