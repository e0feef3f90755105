#pragma once

#include <algorithm>
#include <cmath>
#include <span>

namespace taskemb {

/// log(1 + exp(x)) without overflow or premature underflow.
inline double softplus(double x) noexcept {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

/// d/dx softplus(x).
inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// In-place softmax over `x`; entries equal to -inf get probability 0.
inline void softmax_inplace(std::span<double> x) noexcept {
  const double m = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double& v : x) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : x) v /= z;
}

}  // namespace taskemb
