#pragma once

#include <cstddef>
#include <vector>

namespace steinmc {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::size_t size() const { return nodes.size(); }
};

// Gauss-Legendre rule on [a, b].
QuadratureRule gauss_legendre(std::size_t n, double a = 0.0, double b = 1.0);

// n panels of an order-k Gauss-Legendre rule covering [a, b].
QuadratureRule composite_gauss_legendre(std::size_t k, std::size_t panels, double a = 0.0, double b = 1.0);

// Gauss-Hermite rule for the standard normal: sum_i w_i g(x_i) ~ E g(Z),
// Z ~ N(0,1); weights sum to 1.
QuadratureRule gauss_hermite_normal(std::size_t n);

}  // namespace steinmc
