#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "taskemb/envs/env.hpp"
#include "taskemb/numcore/math.hpp"

namespace taskemb {

/// Intuitive cluster of a task: MultiKeyNav -> bitmask of keys still needed,
/// CartPoleVar -> whether action 0 pushes left (0) or right (1), PointMass ->
/// steering class {0 none, 1 left, 2 right}.
inline int cluster_label(const Task& t) {
  switch (t.env.kind) {
    case EnvKind::MultiKeyNav: return static_cast<int>(multikeynav::missing_keys(t.state0, t.env.variant));
    case EnvKind::CartPoleVar: return cartpole_var::action_zero_class(t.state0);
    case EnvKind::PointMass: return point_mass::steering_class(t.state0);
  }
  return 0;
}

/// Mean silhouette with Euclidean distance; points in singleton clusters
/// score 0.
inline double silhouette(std::span<const std::vector<double>> points, std::span<const int> labels) {
  if (points.size() != labels.size()) throw DimensionError("silhouette: points and labels differ in length");
  std::vector<int> ids(labels.begin(), labels.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) throw Error("silhouette: need at least 2 clusters");
  const std::size_t n = points.size(), k = ids.size();
  std::vector<std::size_t> cluster(n), sizes(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    cluster[i] = static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), labels[i]) - ids.begin());
    ++sizes[cluster[i]];
  }
  double total = 0.0;
  std::vector<double> sum(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum[cluster[j]] += std::sqrt(squared_distance(points[i], points[j]));
    const std::size_t own = cluster[i];
    if (sizes[own] == 1) continue;
    const double a = sum[own] / static_cast<double>(sizes[own] - 1);
    double b = INFINITY;
    for (std::size_t c = 0; c < k; ++c)
      if (c != own) b = std::min(b, sum[c] / static_cast<double>(sizes[c]));
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

/// Ranks starting at 1, ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) r[order[m]] = rank;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("pearson: need two equal-length samples of size >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Mean and standard error (sample standard deviation / sqrt(n)).
inline MeanStderr mean_stderr(std::span<const double> v) {
  MeanStderr r;
  if (v.empty()) return r;
  const double n = static_cast<double>(v.size());
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return r;
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  return r;
}

/// Accuracy per contiguous fold (the remainder after n / folds is dropped).
inline std::vector<double> fold_accuracies(std::span<const char> correct, std::size_t folds = 10) {
  if (folds == 0 || correct.size() < folds) throw Error("fold_accuracies: fewer examples than folds");
  const std::size_t per = correct.size() / folds;
  std::vector<double> acc;
  for (std::size_t f = 0; f < folds; ++f) {
    std::size_t ok = 0;
    for (std::size_t i = f * per; i < (f + 1) * per; ++i) ok += correct[i] ? 1 : 0;
    acc.push_back(static_cast<double>(ok) / static_cast<double>(per));
  }
  return acc;
}

}  // namespace taskemb
