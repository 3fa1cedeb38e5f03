#include "steinmc/mollifier.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include "steinmc/errors.hpp"
#include "steinmc/parallel.hpp"
#include "steinmc/quadrature.hpp"

namespace steinmc {

namespace {

double bump(double t) { return t > 0.0 ? std::exp(-1.0 / (t * t)) : 0.0; }

double sphere_area(std::size_t d) {
  const double h = 0.5 * static_cast<double>(d);
  return 2.0 * std::pow(std::numbers::pi, h) / std::tgamma(h);
}

double ball_volume(std::size_t d) { return sphere_area(d) / static_cast<double>(d); }

}  // namespace

MollifierSmoother::MollifierSmoother(std::size_t d, double eps, std::size_t blocks)
    : MollifierSmoother(d, eps, blocks, Resolution{}) {}

MollifierSmoother::MollifierSmoother(std::size_t d, double eps, std::size_t blocks, Resolution res)
    : d_(d), eps_(eps), blocks_(blocks) {
  if (d < 1 || d > 3) throw DomainError("mollifier supports 1 <= d <= 3");
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError("mollifier bandwidth must lie in (0,1)");
  if (blocks < 1) throw DomainError("mollifier needs at least one block");
  if (d >= 2 && res.angular % 2 != 0) throw DomainError("azimuth node count must be even");
  // 1/c = |S^{d-1}| int_0^1 phi(1 - r^2) r^{d-1} dr
  const QuadratureRule r = composite_gauss_legendre(16, 64, 0.0, 1.0);
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i)
    s += r.weights[i] * bump(1.0 - r.nodes[i] * r.nodes[i]) * std::pow(r.nodes[i], static_cast<double>(d - 1));
  c_ = 1.0 / (sphere_area(d) * s);
  build_block_rule(res);
}

double MollifierSmoother::inverse_c_lower_bound() const {
  return std::exp(-2.0) * std::pow(0.5, static_cast<double>(d_)) * ball_volume(d_);
}

double MollifierSmoother::eta(const double* x) const {
  double r2 = 0.0;
  for (std::size_t a = 0; a < d_; ++a) r2 += x[a] * x[a];
  return c_ * bump(1.0 - r2);
}

double MollifierSmoother::mass(std::size_t panels) const {
  const QuadratureRule r = composite_gauss_legendre(8, panels, -1.0, 1.0);
  const std::size_t n = r.size();
  std::size_t total = 1;
  for (std::size_t a = 0; a < d_; ++a) total *= n;
  std::vector<std::size_t> idx(d_, 0);
  std::vector<double> x(d_);
  double s = 0.0;
  for (std::size_t p = 0; p < total; ++p) {
    double w = 1.0;
    for (std::size_t a = 0; a < d_; ++a) {
      x[a] = r.nodes[idx[a]];
      w *= r.weights[idx[a]];
    }
    s += w * eta(x.data());
    for (std::size_t a = 0; a < d_; ++a) {
      if (++idx[a] < n) break;
      idx[a] = 0;
    }
  }
  return s;
}

void MollifierSmoother::build_block_rule(Resolution res) {
  // Rule for eta on B_d(0,1), in polar coordinates for d >= 2.
  std::vector<double> bn, bw;
  const std::size_t d = d_;
  if (d == 1) {
    const QuadratureRule r = composite_gauss_legendre(8, res.radial / 8 + 1, -1.0, 1.0);
    for (std::size_t i = 0; i < r.size(); ++i) {
      bn.push_back(r.nodes[i]);
      bw.push_back(r.weights[i] * eta(&r.nodes[i]));
    }
  } else {
    const QuadratureRule r = gauss_legendre(res.radial, 0.0, 1.0);
    const QuadratureRule ct = gauss_legendre(res.polar, -1.0, 1.0);
    const std::size_t na = res.angular;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double rad = r.nodes[i];
      const double radial_w = r.weights[i] * c_ * bump(1.0 - rad * rad) * std::pow(rad, static_cast<double>(d - 1));
      for (std::size_t k = 0; k < na; ++k) {
        const double phi = 2.0 * std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(na);
        const double wphi = 2.0 * std::numbers::pi / static_cast<double>(na);
        if (d == 2) {
          bn.push_back(rad * std::cos(phi));
          bn.push_back(rad * std::sin(phi));
          bw.push_back(radial_w * wphi);
        } else {
          for (std::size_t j = 0; j < ct.size(); ++j) {
            const double cz = ct.nodes[j], sz = std::sqrt(1.0 - cz * cz);
            bn.push_back(rad * sz * std::cos(phi));
            bn.push_back(rad * sz * std::sin(phi));
            bn.push_back(rad * cz);
            bw.push_back(radial_w * wphi * ct.weights[j]);
          }
        }
      }
    }
  }
  double total = 0.0;
  for (double w : bw) total += w;
  for (double& w : bw) w /= total;
  // Product over blocks.
  const std::size_t m = bw.size();
  std::size_t count = 1;
  for (std::size_t b = 0; b < blocks_; ++b) count *= m;
  nodes_.resize(count * blocks_ * d);
  weights_.resize(count);
  std::vector<std::size_t> idx(blocks_, 0);
  for (std::size_t p = 0; p < count; ++p) {
    double w = 1.0;
    for (std::size_t b = 0; b < blocks_; ++b) {
      w *= bw[idx[b]];
      for (std::size_t a = 0; a < d; ++a) nodes_[(p * blocks_ + b) * d + a] = bn[idx[b] * d + a];
    }
    weights_[p] = w;
    for (std::size_t b = 0; b < blocks_; ++b) {
      if (++idx[b] < m) break;
      idx[b] = 0;
    }
  }
}

double MollifierSmoother::smooth(const Function& G, const double* x) const {
  const std::size_t D = blocks_ * d_;
  std::vector<double> y(D), terms(weights_.size());
  for (std::size_t p = 0; p < weights_.size(); ++p) {
    for (std::size_t a = 0; a < D; ++a) y[a] = x[a] - eps_ * nodes_[p * D + a];
    terms[p] = weights_[p] * G(y.data());
  }
  return pairwise_sum(terms.begin(), terms.end());
}

MollifiedFunction mollify(MollifierSmoother::Function G, const MollifierSmoother& smoother,
                          const std::vector<std::vector<double>>& probes) {
  auto sm = std::make_shared<MollifierSmoother>(smoother);
  MollifiedFunction out;
  out.evaluate = [sm, G](const double* x) { return sm->smooth(G, x); };
  for (const auto& p : probes) {
    if (p.size() != smoother.blocks() * smoother.dim()) throw DomainError("probe dimension mismatch");
    out.error_estimate = std::max(out.error_estimate, std::abs(out.evaluate(p.data()) - G(p.data())));
  }
  return out;
}

MollifiedFunction mollify(MollifierSmoother::Function G, std::size_t d, double eps, std::size_t blocks,
                          const std::vector<std::vector<double>>& probes) {
  return mollify(std::move(G), MollifierSmoother(d, eps, blocks), probes);
}

}  // namespace steinmc
