#pragma once

// Exhaustive two-way partition search for spherical k-means.

#include <Eigen/Dense>
#include <cstdint>
#include <limits>

namespace test {

struct PartitionOptimum {
  double cost = std::numeric_limits<double>::infinity();  // Σ (1 − cos(x, centroid))
  std::uint32_t mask = 0;
};

/// For a fixed partition the best centroid of a cluster is its normalized
/// direction sum, so the cluster cost is |S| − ‖Σ x̂‖.
inline PartitionOptimum brute_force_two_partition(const Eigen::MatrixXd& X) {
  const int n = static_cast<int>(X.rows());
  Eigen::MatrixXd Xn = X;
  for (int i = 0; i < n; ++i) Xn.row(i).normalize();
  PartitionOptimum best;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(X.cols());
    Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(X.cols());
    for (int i = 0; i < n; ++i) ((mask >> i) & 1u ? a : b) += Xn.row(i);
    const double cost = n - a.norm() - b.norm();
    if (cost < best.cost) best = {cost, mask};
  }
  return best;
}

}  // namespace test
