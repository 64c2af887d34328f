#pragma once

#include <random>
#include <string>

#include "ctxc/tensor.hpp"

namespace ctxc::testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

inline Tensor random_tensor(std::mt19937_64& rng, std::vector<Index> shape, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

// Relative error with an absolute floor: components below the floor are
// compared absolutely at floor * tol, which keeps finite-difference noise on
// near-zero gradients from producing spurious blowups.
inline double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-4) {
  double worst = 0.0;
  for (Index i = 0; i < a.numel(); ++i) worst = std::max(worst, rel_err(a[i], b[i], floor));
  return worst;
}

// Random valid UTF-8 with a mix of ASCII, two/three/four-byte code points.
inline std::string random_utf8(std::mt19937_64& rng, size_t max_cps) {
  const size_t n = rng() % (max_cps + 1);
  std::string s;
  for (size_t i = 0; i < n; ++i) {
    switch (rng() % 8) {
      case 0: s += "\xC3\xA9"; break;          // e-acute
      case 1: s += "\xE4\xBD\xA0"; break;      // CJK
      case 2: s += "\xF0\x9F\x99\x82"; break;  // emoji
      case 3: s += '.'; break;
      case 4: s += ' '; break;
      case 5: s += '\n'; break;
      default: s += static_cast<char>('a' + rng() % 26);
    }
  }
  return s;
}

}  // namespace ctxc::testing
