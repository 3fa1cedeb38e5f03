#include "steinmc/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "steinmc/engine.hpp"
#include "steinmc/errors.hpp"
#include "steinmc/parallel.hpp"

namespace steinmc {

DensityVector::DensityVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw DomainError("density needs at least one cell");
  for (double v : values_)
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("density values must be finite and non-negative");
  uniform_ = std::all_of(values_.begin(), values_.end(), [&](double v) { return v == values_.front(); });
  build_cdf();
}

DensityVector DensityVector::uniform(std::size_t cells) { return DensityVector(std::vector<double>(cells, 1.0)); }

void DensityVector::build_cdf() {
  cdf_.assign(values_.size() + 1, 0.0);
  for (std::size_t i = 0; i < values_.size(); ++i) cdf_[i + 1] = cdf_[i] + values_[i];
}

double DensityVector::mass() const { return pairwise_sum(values_.begin(), values_.end()) * width(); }

DensityVector DensityVector::normalized() const {
  const double m = mass();
  if (!(m > 0.0)) throw NumericError("cannot normalize a density of zero mass");
  std::vector<double> v(values_);
  for (double& x : v) x /= m;
  return DensityVector(std::move(v));
}

double DensityVector::quantile(double u) const {
  if (uniform_) return u;
  const double target = u * cdf_.back();
  auto it = std::upper_bound(cdf_.begin() + 1, cdf_.end(), target);
  if (it == cdf_.end()) --it;
  const auto i = static_cast<std::size_t>(it - cdf_.begin()) - 1;
  const double frac = values_[i] > 0.0 ? (target - cdf_[i]) / values_[i] : 0.0;
  return std::min(1.0, (static_cast<double>(i) + std::clamp(frac, 0.0, 1.0)) * width());
}

double DensityVector::integrate_midpoint(const std::vector<double>& g) const {
  if (g.size() != values_.size()) throw DomainError("integrand grid size mismatch");
  std::vector<double> prod(values_.size());
  for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = g[i] * values_[i];
  return pairwise_sum(prod.begin(), prod.end()) * width();
}

void DensityVector::write_csv(std::ostream& os) const {
  const auto old = os.precision(17);
  os << "x,density\n";
  for (std::size_t i = 0; i < values_.size(); ++i) os << midpoint(i) << ',' << values_[i] << '\n';
  os.precision(old);
}

DensityVector DensityVector::read_csv(std::istream& is) {
  std::string line;
  std::vector<double> v;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DomainError("density CSV rows need two columns");
    v.push_back(std::stod(line.substr(comma + 1)));
  }
  return DensityVector(std::move(v));
}

double UlamOperator::max_row_sum_error() const {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < P.outerSize(); ++i) {
    double s = 0.0;
    for (decltype(P)::InnerIterator it(P, i); it; ++it) s += it.value();
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

DensityVector UlamOperator::push(const DensityVector& h) const {
  if (h.size() != grid) throw DomainError("density and operator grids differ");
  Eigen::Map<const Eigen::VectorXd> v(h.values().data(), static_cast<Eigen::Index>(grid));
  Eigen::VectorXd out = P.transpose() * v;
  return DensityVector(std::vector<double>(out.data(), out.data() + out.size()));
}

namespace {

// Inverse of the LSV left branch x -> x(1 + (2x)^a) on [0, 1/2].
double lsv_left_inverse(double alpha, double y) {
  if (y <= 0.0) return 0.0;
  if (y >= 1.0) return 0.5;
  if (alpha == 0.0) return 0.5 * y;
  double lo = 0.0, hi = 0.5;
  double x = y / (1.0 + std::pow(2.0 * y, alpha));
  x = std::clamp(x, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double p = std::pow(2.0 * x, alpha);
    const double fx = x * (1.0 + p) - y;
    if (fx > 0.0) hi = x;
    else lo = x;
    const double dfx = 1.0 + (alpha + 1.0) * p;
    double next = x - fx / dfx;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-14 * std::max(x, 1e-300) || hi - lo <= 1e-16 * hi) return next;
    x = next;
  }
  std::ostringstream os;
  os << "LSV branch 0 inverse did not converge at y=" << y << " alpha=" << alpha;
  throw NumericError(os.str());
}

// Adds the mass of [a,b] ∩ branch split over image cells. `image` maps the
// branch monotonically increasingly onto an unwrapped interval of the line;
// `inverse` maps back. Image cell index is floor(v*G) mod G.
template <class Image, class Inverse>
void spread(double a, double b, std::size_t grid, Image image, Inverse inverse, std::vector<std::pair<std::size_t, double>>& row) {
  if (!(b > a)) return;
  const double G = static_cast<double>(grid);
  const double va = image(a), vb = image(b);
  double prev_v = va;
  double prev_x = a;
  auto cell_of = [&](double v) {
    const double c = std::floor(v * G);
    auto j = static_cast<long long>(c) % static_cast<long long>(grid);
    if (j < 0) j += static_cast<long long>(grid);
    return static_cast<std::size_t>(j);
  };
  while (prev_v < vb) {
    double next_v = (std::floor(prev_v * G) + 1.0) / G;
    if (next_v <= prev_v) next_v = std::nextafter(prev_v, std::numeric_limits<double>::infinity());
    double next_x;
    if (next_v >= vb) {
      next_v = vb;
      next_x = b;
    } else {
      next_x = std::clamp(inverse(next_v), prev_x, b);
    }
    const std::size_t j = cell_of(prev_v);
    row.emplace_back(j, (next_x - prev_x) * G);
    prev_v = next_v;
    prev_x = next_x;
  }
}

}  // namespace

UlamOperator build_ulam(const IntervalMap& map, std::size_t grid, std::size_t threads) {
  if (grid < 2) throw DomainError("Ulam grid needs at least 2 cells");
  const double G = static_cast<double>(grid);
  std::vector<std::vector<std::pair<std::size_t, double>>> rows(grid);
  const auto& edges = map.edges();
  const bool lsv = map.kind() == IntervalMap::Kind::LSV;
  parallel_for(grid, threads, [&](std::size_t i) {
    const double a = static_cast<double>(i) / G;
    const double b = static_cast<double>(i + 1) / G;
    auto& row = rows[i];
    for (std::size_t br = 0; br + 1 < edges.size(); ++br) {
      const double lo = std::max(a, edges[br]);
      const double hi = std::min(b, edges[br + 1]);
      if (!(hi > lo)) continue;
      if (lsv) {
        const double alpha = map.alpha();
        if (br == 0) {
          spread(lo, hi, grid,
                 [&](double x) { return x >= 0.5 ? 1.0 : x * (1.0 + std::pow(2.0 * x, alpha)); },
                 [&](double y) { return lsv_left_inverse(alpha, y); }, row);
        } else {
          spread(lo, hi, grid, [](double x) { return 2.0 * x - 1.0; }, [](double y) { return 0.5 * (y + 1.0); },
                 row);
        }
      } else {
        const double s = map.slopes()[br];
        const double c = edges[br];
        spread(lo, hi, grid, [&](double x) { return s * (x - c); }, [&](double v) { return c + v / s; }, row);
      }
    }
    // Merge duplicate columns.
    std::sort(row.begin(), row.end());
    std::vector<std::pair<std::size_t, double>> merged;
    for (const auto& [j, v] : row) {
      if (v <= 0.0) continue;
      if (!merged.empty() && merged.back().first == j) merged.back().second += v;
      else merged.emplace_back(j, v);
    }
    row.swap(merged);
  });
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t i = 0; i < grid; ++i)
    for (const auto& [j, v] : rows[i])
      trips.emplace_back(static_cast<int>(i), static_cast<int>(j), v);
  UlamOperator op;
  op.grid = grid;
  op.P.resize(static_cast<Eigen::Index>(grid), static_cast<Eigen::Index>(grid));
  op.P.setFromTriplets(trips.begin(), trips.end());
  op.P.makeCompressed();
  return op;
}

double fixed_point_residual(const UlamOperator& op, const DensityVector& h) {
  const DensityVector ph = op.push(h);
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) s += std::abs(ph[i] - h[i]);
  return s * h.width();
}

DensityVector invariant_density(const UlamOperator& op, const InvariantDensityOptions& opts) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(op.grid));
  const Eigen::SparseMatrix<double, Eigen::ColMajor> Pt = op.P.transpose();
  const double w = 1.0 / static_cast<double>(op.grid);
  double diff = 0.0;
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    Eigen::VectorXd next = Pt * v;
    next *= 1.0 / (next.sum() * w);
    diff = (next - v).lpNorm<1>() * w;
    v.swap(next);
    if (diff < opts.tolerance) return DensityVector(std::vector<double>(v.data(), v.data() + v.size()));
  }
  std::ostringstream os;
  os << "invariant_density: power iteration did not converge, L1 step " << diff;
  throw NumericError(os.str());
}

ConeReport cone_check(const DensityVector& h, double alpha, double tolerance) {
  ConeReport r;
  r.alpha = alpha;
  const std::size_t G = h.size();
  r.tolerance = tolerance >= 0.0 ? tolerance : 2.0 / static_cast<double>(G);
  const double m = h.mass();
  const double w = h.width();
  r.decreasing_margin = r.weighted_increasing_margin = std::numeric_limits<double>::infinity();
  r.bound_margin = std::numeric_limits<double>::infinity();
  const double coef = std::pow(2.0, alpha) * (2.0 + alpha) * m;
  for (std::size_t i = 0; i < G; ++i) {
    const double a = static_cast<double>(i) * w, b = a + w;
    // Cell average of x^{-alpha}.
    const double avg = alpha == 1.0 ? (std::log(b) - std::log(a)) / w
                                     : (std::pow(b, 1.0 - alpha) - std::pow(a, 1.0 - alpha)) / ((1.0 - alpha) * w);
    const double margin = coef * avg - h[i];
    if (margin < r.bound_margin) {
      r.bound_margin = margin;
      r.bound_worst_cell = i;
    }
    if (i + 1 < G) {
      const double fi = h[i], fj = h[i + 1];
      const double dm = fi > 0.0 ? (fi - fj) / fi : (fj > 0.0 ? -1.0 : 0.0);
      if (dm < r.decreasing_margin) {
        r.decreasing_margin = dm;
        r.decreasing_worst_cell = i;
      }
      const double gi = std::pow(h.midpoint(i), alpha + 1.0) * fi;
      const double gj = std::pow(h.midpoint(i + 1), alpha + 1.0) * fj;
      const double wm = gj > 0.0 ? (gj - gi) / gj : (gi > 0.0 ? -1.0 : 0.0);
      if (wm < r.weighted_increasing_margin) {
        r.weighted_increasing_margin = wm;
        r.weighted_worst_cell = i;
      }
    }
  }
  if (G == 1) r.decreasing_margin = r.weighted_increasing_margin = 0.0;
  r.decreasing_ok = r.decreasing_margin >= -r.tolerance;
  r.weighted_increasing_ok = r.weighted_increasing_margin >= -r.tolerance;
  r.bound_ok = r.bound_margin >= 0.0;
  return r;
}

CorrelationEstimate correlation_estimate(const MapSequence& seq, const Observable& f, const Observable& g,
                                         std::size_t n, std::size_t m, const DensityVector& mu0,
                                         std::size_t samples, std::uint64_t seed, std::size_t fa, std::size_t gb,
                                         std::size_t threads) {
  if (samples < 2) throw DomainError("correlation_estimate needs at least two samples");
  if (fa >= f.dim() || gb >= g.dim()) throw IndexError("observable component out of range");
  const std::size_t last = std::max(n, m);
  const std::size_t horizon = seq.mode() == MapSequence::Mode::Quasistatic ? seq.horizon() : last;
  if (last > horizon) throw IndexError("correlation_estimate: time index beyond quasistatic horizon");
  const OrbitPlan plan(seq, horizon, last);
  std::vector<double> fv(samples), gv(samples);
  for_each_sample_block(samples, seed, 1, threads, [&](std::size_t first, std::size_t end, Rng& rng) {
    BitPool bits(rng);
    std::vector<double> fo(f.dim()), go(g.dim());
    for (std::size_t s = first; s < end; ++s) {
      double x = draw_initial(&mu0, rng);
      for (std::size_t k = 0; k <= last; ++k) {
        if (k > 0) x = plan.step(k - 1, x, bits);
        if (k == n) {
          f.evaluate(x, fo.data());
          fv[s] = fo[fa];
        }
        if (k == m) {
          g.evaluate(x, go.data());
          gv[s] = go[gb];
        }
      }
    }
  });
  const double S = static_cast<double>(samples);
  const double fm = pairwise_sum(fv.begin(), fv.end()) / S;
  const double gm = pairwise_sum(gv.begin(), gv.end()) / S;
  std::vector<double> prod(samples);
  for (std::size_t s = 0; s < samples; ++s) prod[s] = (fv[s] - fm) * (gv[s] - gm);
  const double mean = pairwise_sum(prod.begin(), prod.end()) / S;
  for (double& p : prod) p = (p - mean) * (p - mean);
  const double var = pairwise_sum(prod.begin(), prod.end()) / (S - 1.0);
  return {mean, std::sqrt(var / S), samples};
}

namespace {

std::vector<double> component_cell_averages(const Observable& f, std::size_t comp, std::size_t grid) {
  std::vector<double> buf(f.dim());
  auto eval = [&](double x) {
    f.evaluate(x, buf.data());
    return buf[comp];
  };
  // Values may be negative, so this bypasses DensityVector::from_function.
  static const double nodes[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
  static const double weights[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
  std::vector<double> out(grid);
  const double h = 1.0 / static_cast<double>(grid);
  for (std::size_t i = 0; i < grid; ++i) {
    const double mid = (static_cast<double>(i) + 0.5) * h;
    double s = 0.0;
    for (int q = 0; q < 3; ++q) s += weights[q] * eval(mid + 0.5 * h * nodes[q]);
    out[i] = s;
  }
  return out;
}

}  // namespace

DensityVector pushforward(const MapSequence& seq, const DensityVector& mu0, std::size_t k, std::size_t horizon,
                          std::size_t grid) {
  if (mu0.size() != grid) throw DomainError("initial density grid differs from requested grid");
  DensityVector h = mu0;
  const auto params = seq.step_parameters(horizon, k);
  for (std::size_t j = 0; j < k; ++j) h = build_ulam(seq.family().make(params[j]), grid).push(h);
  return h;
}

double correlation_ulam(const MapSequence& seq, const Observable& f, const Observable& g, std::size_t n,
                        std::size_t m, const DensityVector& mu0, std::size_t grid, std::size_t fa, std::size_t gb) {
  if (fa >= f.dim() || gb >= g.dim()) throw IndexError("observable component out of range");
  if (mu0.size() != grid) throw DomainError("initial density grid differs from requested grid");
  // Order so the earlier time carries the multiplied observable.
  const bool swap = n > m;
  const std::size_t early = swap ? m : n, late = swap ? n : m;
  const std::vector<double> fe = component_cell_averages(swap ? g : f, swap ? gb : fa, grid);
  const std::vector<double> fl = component_cell_averages(swap ? f : g, swap ? fa : gb, grid);
  const std::size_t horizon = seq.mode() == MapSequence::Mode::Quasistatic ? seq.horizon() : late;
  const auto params = seq.step_parameters(horizon, late);
  const double w = 1.0 / static_cast<double>(grid);
  using V = Eigen::VectorXd;
  V rho = Eigen::Map<const V>(mu0.values().data(), static_cast<Eigen::Index>(grid));
  for (std::size_t j = 0; j < early; ++j) {
    const auto op = build_ulam(seq.family().make(params[j]), grid);
    rho = op.P.transpose() * rho;
  }
  const Eigen::Map<const V> fev(fe.data(), static_cast<Eigen::Index>(grid));
  const Eigen::Map<const V> flv(fl.data(), static_cast<Eigen::Index>(grid));
  const double mean_early = fev.dot(rho) * w;
  // Signed measure (f - mu(f)) rho transported to the later time.
  V sig = (fev.array() - mean_early).matrix().cwiseProduct(rho);
  for (std::size_t j = early; j < late; ++j) {
    const auto op = build_ulam(seq.family().make(params[j]), grid);
    sig = op.P.transpose() * sig;
  }
  return flv.dot(sig) * w;
}

namespace {

struct AffinePiece {
  double a, b;    // branch interval [a,b)
  double ya;      // image of a under the composition
  double slope;   // derivative of the composition
};

// Splits every branch of the current composition where the next map has a
// branch edge or a mod-1 lap boundary.
std::vector<AffinePiece> refine(const std::vector<AffinePiece>& pieces, const IntervalMap& map,
                                std::size_t max_branches) {
  const auto& edges = map.edges();
  std::vector<AffinePiece> next;
  std::vector<double> cuts;
  for (const auto& p : pieces) {
    const double yb = p.ya + p.slope * (p.b - p.a);
    cuts.assign(1, p.ya);
    for (std::size_t br = 0; br < map.branch_count(); ++br) {
      const double c0 = edges[br], c1 = edges[br + 1], s = map.slopes()[br];
      if (c0 > p.ya && c0 < yb) cuts.push_back(c0);
      for (double j = 1.0;; j += 1.0) {
        const double y = c0 + j / s;
        if (y >= c1 || y >= yb) break;
        if (y > p.ya) cuts.push_back(y);
      }
    }
    cuts.push_back(yb);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    for (std::size_t q = 0; q + 1 < cuts.size(); ++q) {
      const double y0 = cuts[q], y1 = cuts[q + 1];
      const double x0 = p.a + (y0 - p.ya) / p.slope;
      const double x1 = q + 2 == cuts.size() ? p.b : p.a + (y1 - p.ya) / p.slope;
      const double ymid = 0.5 * (y0 + y1);
      std::size_t br = 0;
      while (br + 1 < map.branch_count() && ymid >= edges[br + 1]) ++br;
      const double s = map.slopes()[br];
      const double v = s * (y0 - edges[br]);
      next.push_back({x0, x1, v - std::floor(v + 1e-12 * s), p.slope * s});
    }
    if (next.size() > max_branches) throw NumericError("variation diagnostic: branch count exceeds cap");
  }
  return next;
}

template <class MapAt>
VariationReport variation_of(std::size_t n, std::size_t max_branches, MapAt map_at) {
  VariationReport r;
  std::vector<AffinePiece> pieces{{0.0, 1.0, 0.0, 1.0}};
  for (std::size_t k = 0; k < n; ++k) pieces = refine(pieces, map_at(k), max_branches);
  // 1/|(T^n)'| is constant on each branch, so only boundary jumps remain.
  r.branches = pieces.size();
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const double inv = 1.0 / std::abs(pieces[i].slope);
    r.max_inverse_derivative = std::max(r.max_inverse_derivative, inv);
    if (i > 0) r.boundary_jump_sum += std::abs(inv - 1.0 / std::abs(pieces[i - 1].slope));
  }
  return r;
}

}  // namespace

VariationReport variation_diagnostic(const MapSequence& seq, std::size_t n, std::size_t max_branches) {
  if (seq.family().kind == MapFamily::Kind::LSV)
    throw UnsupportedError("variation diagnostic needs piecewise linear maps; LSV derivatives are not constant");
  const std::size_t horizon = seq.mode() == MapSequence::Mode::Quasistatic ? seq.horizon() : n;
  const auto params = seq.step_parameters(horizon, n);
  return variation_of(n, max_branches, [&](std::size_t k) { return seq.family().make(params[k]); });
}

VariationReport variation_diagnostic(const IntervalMap& map, std::size_t n, std::size_t max_branches) {
  if (map.kind() == IntervalMap::Kind::LSV)
    throw UnsupportedError("variation diagnostic needs piecewise linear maps; LSV derivatives are not constant");
  return variation_of(n, max_branches, [&](std::size_t) { return map; });
}

}  // namespace steinmc
