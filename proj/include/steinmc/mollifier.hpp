#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace steinmc {

// eta(x) = c phi(1 - |x|^2) on R^d with phi(t) = exp(-1/t^2) for t > 0 and
// 0 otherwise, normalized to unit mass. The smoother convolves functions of
// `blocks` stacked R^d arguments with j(y) = prod_i eta(y_i), scaled by eps.
class MollifierSmoother {
 public:
  struct Resolution {
    std::size_t radial = 24;   // Gauss-Legendre nodes in r (in x for d = 1)
    std::size_t polar = 12;    // Gauss-Legendre nodes in cos(theta), d = 3
    std::size_t angular = 24;  // equispaced azimuth nodes, d >= 2 (even)
  };

  MollifierSmoother(std::size_t d, double eps, std::size_t blocks = 2);
  MollifierSmoother(std::size_t d, double eps, std::size_t blocks, Resolution res);

  std::size_t dim() const { return d_; }
  std::size_t blocks() const { return blocks_; }
  double eps() const { return eps_; }
  double c() const { return c_; }
  // e^{-2} (1/2)^d m(B_d(0,1)), a lower bound for 1/c.
  double inverse_c_lower_bound() const;

  double eta(const double* x) const;
  // Integral of eta over [-1,1]^d by a tensor Gauss-Legendre rule, computed
  // independently of the radial rule that fixes c.
  double mass(std::size_t panels_per_axis = 24) const;

  // Quadrature rule for j: nodes are blocks*d coordinates each, weights sum to 1.
  std::size_t rule_size() const { return weights_.size(); }

  using Function = std::function<double(const double*)>;
  // G^eps(x) = int G(x - eps y) j(y) dy
  double smooth(const Function& G, const double* x) const;

 private:
  void build_block_rule(Resolution res);

  std::size_t d_;
  double eps_;
  std::size_t blocks_;
  double c_ = 0.0;
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

struct MollifiedFunction {
  std::function<double(const double*)> evaluate;
  // max over probes of |G^eps - G|
  double error_estimate = 0.0;
};

MollifiedFunction mollify(MollifierSmoother::Function G, const MollifierSmoother& smoother,
                          const std::vector<std::vector<double>>& probes);

MollifiedFunction mollify(MollifierSmoother::Function G, std::size_t d, double eps, std::size_t blocks,
                          const std::vector<std::vector<double>>& probes);

}  // namespace steinmc
