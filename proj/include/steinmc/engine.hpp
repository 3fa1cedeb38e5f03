#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "steinmc/dynamics.hpp"
#include "steinmc/parallel.hpp"
#include "steinmc/rng.hpp"

namespace steinmc {

class DensityVector;

// Streams fresh random bits one at a time from an Rng.
class BitPool {
 public:
  explicit BitPool(Rng& rng) : rng_(rng) {}
  std::uint64_t next() {
    if (left_ == 0) {
      word_ = rng_.bits();
      left_ = 64;
    }
    --left_;
    const std::uint64_t b = word_ & 1u;
    word_ >>= 1;
    return b;
  }

 private:
  Rng& rng_;
  std::uint64_t word_ = 0;
  int left_ = 0;
};

// Precomputed maps of one row of a sequence. maps[k] sends y_k to y_{k+1}.
//
// Doubling steps (x -> 2x mod 1) shift one mantissa bit out per application,
// so a double-precision orbit collapses to 0 after ~53 steps. For those
// steps the vacated lowest bit of the 2^-53 grid is refilled with a fresh
// random bit. For a uniform start on that grid this reproduces the law of
// the exact orbit truncated to 53 bits.
class OrbitPlan {
 public:
  OrbitPlan(const MapSequence& seq, std::size_t horizon, std::size_t steps);

  std::size_t steps() const { return maps_.size(); }
  const IntervalMap& map(std::size_t k) const { return maps_[k]; }

  double step(std::size_t k, double x, BitPool& bits) const {
    if (doubling_[k]) {
      double y = 2.0 * x;
      y -= std::floor(y);
      if (bits.next()) y += 0x1.0p-53;
      if (y >= 1.0) y -= 1.0;
      return y;
    }
    return maps_[k].step(x);
  }

 private:
  std::vector<IntervalMap> maps_;
  std::vector<unsigned char> doubling_;
};

// Initial point from mu0 (nullptr means Lebesgue).
double draw_initial(const DensityVector* mu0, Rng& rng);

inline constexpr std::size_t kSampleBlock = 1024;

// Calls body(first, last, rng) over fixed blocks of sample indices. Each block
// owns an Rng derived from (seed, stage, block), so results do not depend on
// the thread count.
template <class Body>
void for_each_sample_block(std::size_t samples, std::uint64_t seed, std::uint64_t stage, std::size_t threads,
                           Body&& body) {
  const std::size_t blocks = (samples + kSampleBlock - 1) / kSampleBlock;
  parallel_for(blocks, threads, [&](std::size_t b) {
    Rng rng(seed, (stage << 32) ^ static_cast<std::uint64_t>(b));
    const std::size_t first = b * kSampleBlock;
    const std::size_t last = std::min(samples, first + kSampleBlock);
    body(first, last, rng);
  });
}

}  // namespace steinmc
