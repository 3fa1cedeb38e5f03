#include "steinmc/engine.hpp"

#include "steinmc/transfer.hpp"

namespace steinmc {

OrbitPlan::OrbitPlan(const MapSequence& seq, std::size_t horizon, std::size_t steps) {
  const auto params = seq.step_parameters(horizon, steps);
  maps_.reserve(steps);
  doubling_.reserve(steps);
  for (double p : params) {
    maps_.push_back(seq.family().make(p));
    doubling_.push_back(maps_.back().is_doubling() ? 1 : 0);
  }
}

double draw_initial(const DensityVector* mu0, Rng& rng) {
  const double u = rng.uniform();
  if (mu0 == nullptr || mu0->is_uniform()) return u;
  return mu0->quantile(u);
}

}  // namespace steinmc
