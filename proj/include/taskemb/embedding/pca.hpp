#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Eigenvalues>

#include "taskemb/numcore/error.hpp"

namespace taskemb {

struct PcaResult {
  std::vector<std::vector<double>> projected;   // one k-vector per point
  std::vector<double> explained_variance_ratio; // length k
  std::vector<std::vector<double>> components;  // k unit vectors of length n
  bool degenerate = false;                      // all points equal
};

/// Projects mean-centred points onto the top-k eigenvectors of their
/// covariance. Each component's sign is fixed so that its largest-magnitude
/// entry is positive.
inline PcaResult pca_project(std::span<const std::vector<double>> points, std::size_t k) {
  if (points.size() < 2) throw Error("pca_project: need at least 2 points");
  const std::size_t n = points.front().size();
  if (k == 0 || k > n) throw DimensionError("pca_project: k must be in [1, dim]");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != n) throw DimensionError("pca_project: points have different dimensions");
    for (std::size_t j = 0; j < n; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = points[i][j];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(points.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Eigen::VectorXd vals = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd vecs = solver.eigenvectors();
  double total = 0.0;
  for (Eigen::Index i = 0; i < vals.size(); ++i) total += std::max(0.0, vals(i));
  PcaResult r;
  r.degenerate = total <= 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(n - 1 - c);
    Eigen::VectorXd v = vecs.col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    r.components.emplace_back(v.data(), v.data() + v.size());
    r.explained_variance_ratio.push_back(r.degenerate ? 0.0 : std::max(0.0, vals(col)) / total);
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> p(k);
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += x(i, static_cast<Eigen::Index>(j)) * r.components[c][j];
      p[c] = s;
    }
    r.projected.push_back(std::move(p));
  }
  return r;
}

}  // namespace taskemb
