#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lttr/nn.hpp"
#include "lttr/tensor.hpp"

namespace testutil {

inline std::vector<double> rnd_vec(int64_t n, uint64_t seed, double lo = -1.0,
                                   double hi = 1.0) {
  lttr::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Values bounded away from zero so relu kinks cannot sit on the
// finite-difference step.
inline std::vector<double> rnd_vec_offzero(int64_t n, uint64_t seed,
                                           double mag_lo = 0.2,
                                           double mag_hi = 1.0) {
  lttr::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) {
    const double m = rng.uniform(mag_lo, mag_hi);
    x = rng.uniform01() < 0.5 ? -m : m;
  }
  return v;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  if (a.size() != b.size()) return 1e300;
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline std::vector<double> fetch(const lttr::ParamStore& ps,
                                 const std::string& name) {
  return ps.get(name).value();
}

}  // namespace testutil
