#include "wordorder/random.hpp"

#include <cmath>

namespace wordorder {

std::uint64_t SplitMix64::uniform(std::uint64_t bound) {
  if (bound <= 1) return 0;
  // 2^64 mod bound; draws below it would over-represent small residues.
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = next();
    if (r >= threshold) return r % bound;
  }
}

double SplitMix64::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform01() - 1.0;
    v = 2.0 * uniform01() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  has_spare_ = true;
  return u * m;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  SplitMix64 g(base ^ (0xd1b54a32d192ed03ULL * (stream + 1)));
  return g.next();
}

}  // namespace wordorder
