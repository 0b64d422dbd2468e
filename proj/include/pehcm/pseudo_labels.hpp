#pragma once

// Per-coarse-class feature memory and spherical k-means pseudo-labelling.

#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pehcm/errors.hpp"
#include "pehcm/geometry.hpp"

namespace pehcm {

using Matrix = Eigen::MatrixXd;

/// Ring buffers of the latest `capacity` unit-normalized features per coarse class.
class MemoryBank {
 public:
  MemoryBank(int num_classes, std::size_t capacity, Eigen::Index dim)
      : capacity_(capacity), dim_(dim), groups_(static_cast<std::size_t>(num_classes)) {
    if (num_classes < 1 || capacity < 1 || dim < 1) throw ContractError("MemoryBank: sizes must be positive");
  }

  int num_classes() const { return static_cast<int>(groups_.size()); }
  std::size_t capacity() const { return capacity_; }
  Eigen::Index dim() const { return dim_; }
  std::size_t size(int coarse) const { return group(coarse).size(); }
  const std::deque<Vector>& group(int coarse) const {
    if (coarse < 0 || coarse >= num_classes()) {
      throw ContractError("MemoryBank: unknown coarse label " + std::to_string(coarse));
    }
    return groups_[static_cast<std::size_t>(coarse)];
  }

  /// Oldest first, one row per stored feature.
  Matrix group_matrix(int coarse) const {
    const auto& g = group(coarse);
    Matrix out(static_cast<Eigen::Index>(g.size()), dim_);
    for (std::size_t i = 0; i < g.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = g[i].transpose();
    return out;
  }

  void push(const Vector& feature, int coarse) {
    if (coarse < 0 || coarse >= num_classes()) {
      throw ContractError("memory_push: unknown coarse label " + std::to_string(coarse));
    }
    if (feature.size() != dim_) throw ContractError("memory_push: feature dimension mismatch");
    const double n = feature.norm();
    if (!(n > 0.0)) throw InvalidInput("memory_push: zero feature");
    auto& g = groups_[static_cast<std::size_t>(coarse)];
    g.push_back(feature / n);
    while (g.size() > capacity_) g.pop_front();
  }

 private:
  std::size_t capacity_;
  Eigen::Index dim_;
  std::vector<std::deque<Vector>> groups_;
};

inline void memory_push(MemoryBank& bank, const Matrix& features, std::span<const int> coarse) {
  if (static_cast<std::size_t>(features.rows()) != coarse.size()) {
    throw ContractError("memory_push: label count does not match feature rows");
  }
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    bank.push(features.row(i).transpose(), coarse[static_cast<std::size_t>(i)]);
  }
}

struct SphericalKMeansResult {
  Matrix centroids;  // k × dim, unit rows
  std::vector<int> assignment;
  double objective = 0.0;  // Σ cos(x, assigned centroid)
  std::vector<double> objective_trace;  // after each assignment step
  int iterations = 0;
};

namespace detail {

inline int argmax_lowest(const Eigen::RowVectorXd& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = static_cast<int>(j);
  }
  return best;
}

// Same rule, but values within a few ulps of the best count as ties. Keeps
// Lloyd from flipping between centroids that differ only by rounding.
inline int argmax_lowest_tol(const Eigen::RowVectorXd& row) {
  constexpr double tol = 8.0 * std::numeric_limits<double>::epsilon();
  int best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best) + tol) best = static_cast<int>(j);
  }
  return best;
}

inline Matrix normalize_rows(const Matrix& X) {
  Matrix out = X;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

// k-means++ seeding with cosine distance as the sampling weight.
inline Matrix seed_centroids(const Matrix& X, int k, std::mt19937_64& rng) {
  const Eigen::Index n = X.rows();
  Matrix C(k, X.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  C.row(0) = X.row(pick(rng));
  Eigen::VectorXd best_cos = X * C.row(0).transpose();
  for (int c = 1; c < k; ++c) {
    Eigen::VectorXd weight = (1.0 - best_cos.array()).cwiseMax(0.0).matrix();
    const double total = weight.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= weight(i);
        if (r < 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    C.row(c) = X.row(chosen);
    best_cos = best_cos.cwiseMax(X * C.row(c).transpose());
  }
  return C;
}

inline SphericalKMeansResult lloyd(const Matrix& X, Matrix C, int max_iter) {
  const Eigen::Index n = X.rows();
  const int k = static_cast<int>(C.rows());
  SphericalKMeansResult res;
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<bool> reseeded(static_cast<std::size_t>(k), false);
  for (int it = 0; it < max_iter; ++it) {
    const Matrix sims = X * C.transpose();
    std::vector<int> next(static_cast<std::size_t>(n));
    double obj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      next[static_cast<std::size_t>(i)] = argmax_lowest_tol(sims.row(i));
      obj += sims(i, next[static_cast<std::size_t>(i)]);
    }
    res.objective_trace.push_back(obj);
    res.iterations = it + 1;
    const bool fixed_point = (next == assign);
    assign = std::move(next);
    if (fixed_point) break;

    Matrix sums = Matrix::Zero(k, X.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += X.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      const double norm = sums.row(c).norm();
      if (counts[static_cast<std::size_t>(c)] > 0 && norm > 0.0) {
        C.row(c) = sums.row(c) / norm;
      } else if (counts[static_cast<std::size_t>(c)] == 0 && !reseeded[static_cast<std::size_t>(c)]) {
        // Empty cluster: move it once onto the worst-served point.
        Eigen::Index worst = 0;
        double worst_cos = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i) {
          const double s = sims(i, assign[static_cast<std::size_t>(i)]);
          if (s < worst_cos) {
            worst_cos = s;
            worst = i;
          }
        }
        C.row(c) = X.row(worst);
        reseeded[static_cast<std::size_t>(c)] = true;
      }
    }
  }
  res.centroids = std::move(C);
  res.assignment = std::move(assign);
  res.objective = res.objective_trace.back();
  return res;
}

// Best single-point transfer between clusters ("first variation"). Returns
// false when no move raises Σ‖cluster sum‖ by more than rounding.
inline bool first_variation(const Matrix& X, std::vector<int>& assign, int k) {
  Matrix sums = Matrix::Zero(k, X.cols());
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    sums.row(assign[static_cast<std::size_t>(i)]) += X.row(i);
    ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
  }
  Eigen::VectorXd norms(k);
  for (int c = 0; c < k; ++c) norms(c) = sums.row(c).norm();
  double best_gain = 1e-12 * static_cast<double>(X.rows());
  Eigen::Index best_i = -1;
  int best_to = -1;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const int from = assign[static_cast<std::size_t>(i)];
    if (counts[static_cast<std::size_t>(from)] < 2) continue;
    const double loss = norms(from) - (sums.row(from) - X.row(i)).norm();
    for (int to = 0; to < k; ++to) {
      if (to == from) continue;
      const double gain = (sums.row(to) + X.row(i)).norm() - norms(to) - loss;
      if (gain > best_gain) {
        best_gain = gain;
        best_i = i;
        best_to = to;
      }
    }
  }
  if (best_i < 0) return false;
  assign[static_cast<std::size_t>(best_i)] = best_to;
  return true;
}

// Lloyd to a fixed point, then alternate single-point moves with further
// Lloyd passes until neither improves.
inline SphericalKMeansResult refine(const Matrix& X, Matrix C, int max_iter) {
  auto res = lloyd(X, std::move(C), max_iter);
  const int k = static_cast<int>(res.centroids.rows());
  for (int round = 0; round < max_iter; ++round) {
    std::vector<int> assign = res.assignment;
    if (!first_variation(X, assign, k)) break;
    Matrix moved = Matrix::Zero(k, X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) moved.row(assign[static_cast<std::size_t>(i)]) += X.row(i);
    for (int c = 0; c < k; ++c) {
      const double n = moved.row(c).norm();
      moved.row(c) = n > 0.0 ? Eigen::RowVectorXd(moved.row(c) / n) : Eigen::RowVectorXd(res.centroids.row(c));
    }
    auto next = lloyd(X, std::move(moved), max_iter);
    if (!(next.objective > res.objective)) break;
    next.objective_trace.insert(next.objective_trace.begin(), res.objective_trace.begin(), res.objective_trace.end());
    next.iterations += res.iterations;
    res = std::move(next);
  }
  return res;
}

}  // namespace detail

/// Spherical k-means on the rows of X (normalized internally). Runs `n_init`
/// seeded restarts and keeps the one with the highest objective; each restart
/// iterates Lloyd to a fixed point (or `max_iter` steps) and then tries
/// single-point moves between clusters, re-running Lloyd after each accepted move.
inline SphericalKMeansResult spherical_kmeans(const Matrix& X, int k, std::uint64_t seed, int n_init = 10,
                                              int max_iter = 100) {
  if (k < 1) throw ContractError("spherical_kmeans: k must be at least 1");
  if (X.rows() < k) throw ContractError("spherical_kmeans: fewer points than clusters");
  const Matrix Xn = detail::normalize_rows(X);
  std::mt19937_64 rng(seed);
  std::optional<SphericalKMeansResult> best;
  for (int r = 0; r < std::max(n_init, 1); ++r) {
    auto res = detail::refine(Xn, detail::seed_centroids(Xn, k, rng), max_iter);
    if (!best || res.objective > best->objective) best = std::move(res);
  }
  return std::move(*best);
}

/// Per coarse class centroids; a class with fewer stored samples than
/// k_clusters has no model.
struct ClusterModel {
  int k_clusters = 1;
  std::vector<std::optional<Matrix>> centroids;

  bool has_model(int coarse) const {
    return coarse >= 0 && static_cast<std::size_t>(coarse) < centroids.size() &&
           centroids[static_cast<std::size_t>(coarse)].has_value();
  }
};

inline std::uint64_t class_seed(std::uint64_t seed, int coarse) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(coarse), 0x9e3779b9u};
  std::uint32_t parts[2];
  seq.generate(parts, parts + 2);
  return (static_cast<std::uint64_t>(parts[0]) << 32) | parts[1];
}

inline ClusterModel recluster(const MemoryBank& bank, int k_clusters, std::uint64_t seed, int n_init = 10) {
  if (k_clusters < 1) throw ContractError("recluster: k_clusters must be at least 1");
  ClusterModel model;
  model.k_clusters = k_clusters;
  model.centroids.resize(static_cast<std::size_t>(bank.num_classes()));
  for (int c = 0; c < bank.num_classes(); ++c) {
    if (bank.size(c) < static_cast<std::size_t>(k_clusters)) continue;
    model.centroids[static_cast<std::size_t>(c)] =
        spherical_kmeans(bank.group_matrix(c), k_clusters, class_seed(seed, c), n_init).centroids;
  }
  return model;
}

/// Index of the maximum-cosine centroid within each sample's own coarse class
/// (lowest index on ties); absent when that class has no model.
inline std::vector<std::optional<int>> assign_pseudo(const Matrix& features, std::span<const int> coarse,
                                                     const ClusterModel& model) {
  if (static_cast<std::size_t>(features.rows()) != coarse.size()) {
    throw ContractError("assign_pseudo: label count does not match feature rows");
  }
  std::vector<std::optional<int>> out(coarse.size());
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    if (!model.has_model(coarse[i])) continue;
    const Matrix& C = *model.centroids[static_cast<std::size_t>(coarse[i])];
    const Vector f = features.row(static_cast<Eigen::Index>(i)).transpose();
    const double n = f.norm();
    if (!(n > 0.0)) throw InvalidInput("assign_pseudo: zero feature");
    out[i] = detail::argmax_lowest((C * (f / n)).transpose());
  }
  return out;
}

}  // namespace pehcm
