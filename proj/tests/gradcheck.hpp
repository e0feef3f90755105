#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "taskemb/numcore/rng.hpp"

namespace taskemb::gradcheck {

/// Relative error |a - fd| / max(|a|, |fd|, 1e-6) of central differences.
inline double relative_error(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
}

/// Worst relative error over `coords` random coordinates of `params`.
/// `loss` is evaluated at perturbed copies of the parameter vector.
inline double max_gradient_error(const std::vector<double>& params, const std::vector<double>& analytic,
                                 const std::function<double(const std::vector<double>&)>& loss, std::size_t coords,
                                 Rng& rng, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t c = 0; c < coords; ++c) {
    const std::size_t i = static_cast<std::size_t>(rng.below(params.size()));
    auto p = params, m = params;
    p[i] += h;
    m[i] -= h;
    const double fd = (loss(p) - loss(m)) / (2.0 * h);
    worst = std::max(worst, relative_error(analytic[i], fd));
  }
  return worst;
}

}  // namespace taskemb::gradcheck
