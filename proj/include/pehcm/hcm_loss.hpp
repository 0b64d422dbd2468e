#pragma once

// Hierarchical cosine margin loss and the adaptive target-distance ladder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pehcm/errors.hpp"
#include "pehcm/geometry.hpp"

namespace pehcm {

using Matrix = Eigen::MatrixXd;

inline constexpr double kKlEps = 1e-8;

struct LabelTriple {
  std::int64_t instance_id = 0;
  std::optional<int> fine_pseudo;  // scoped within `coarse`
  int coarse = 0;

  friend bool operator==(const LabelTriple&, const LabelTriple&) = default;
};

/// Target ladder (d0, d1, d2, d3). d0 and d3 are fixed anchors.
struct TargetDistances {
  static constexpr double kInitD1 = 0.134;  // 1 − cos 30°
  static constexpr double kInitD2 = 0.5;    // 1 − cos 60°

  double d0 = 0.0;
  double d1 = kInitD1;
  double d2 = kInitD2;
  double d3 = 1.0;
  double beta = 0.999;
  int last_reinit_epoch = -1;

  void reset_middle() {
    d1 = kInitD1;
    d2 = kInitD2;
  }

  friend bool operator==(const TargetDistances&, const TargetDistances&) = default;
};

inline double cosine_distance(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw ContractError("cosine_distance: dimension mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0)) throw InvalidInput("cosine_distance: zero-norm input");
  return std::clamp(1.0 - u.dot(v) / (nu * nv), 0.0, 2.0);
}

/// W(i, j) = d_cos(q_i, k_j); rows of Q and K are samples.
inline Matrix distance_matrix(const Matrix& Q, const Matrix& K) {
  if (Q.rows() != K.rows() || Q.cols() != K.cols()) {
    throw ContractError("distance_matrix: Q and K shapes differ");
  }
  const Eigen::VectorXd qn = Q.rowwise().norm();
  const Eigen::VectorXd kn = K.rowwise().norm();
  if ((qn.array() <= 0.0).any() || (kn.array() <= 0.0).any()) {
    throw InvalidInput("distance_matrix: zero-norm row");
  }
  const Matrix qh = qn.cwiseInverse().asDiagonal() * Q;
  const Matrix kh = kn.cwiseInverse().asDiagonal() * K;
  return (1.0 - (qh * kh.transpose()).array()).cwiseMax(0.0).cwiseMin(2.0).matrix();
}

struct FeatureGrads {
  Matrix q;
  Matrix k;
};

/// Reverse pass of distance_matrix: d/dq d_cos(q, k) = −(k̂ − cos·q̂)/|q|.
inline FeatureGrads distance_matrix_backward(const Matrix& Q, const Matrix& K, const Matrix& W_bar) {
  const Eigen::VectorXd qn = Q.rowwise().norm();
  const Eigen::VectorXd kn = K.rowwise().norm();
  const Matrix qh = qn.cwiseInverse().asDiagonal() * Q;
  const Matrix kh = kn.cwiseInverse().asDiagonal() * K;
  const Matrix cos = qh * kh.transpose();
  const Matrix gc = -W_bar;  // d/dcos of (1 − cos)
  const Matrix gcc = gc.cwiseProduct(cos);
  FeatureGrads g;
  // dq_i = Σ_j gc_ij (k̂_j − cos_ij q̂_i)/|q_i|
  g.q = qn.cwiseInverse().asDiagonal() * (gc * kh - gcc.rowwise().sum().asDiagonal() * qh);
  g.k = kn.cwiseInverse().asDiagonal() * (gc.transpose() * qh - gcc.colwise().sum().transpose().asDiagonal() * kh);
  return g;
}

/// Ladder branch for a (query, key) pair: 0 same instance, 1 same fine pseudo-label,
/// 2 same coarse, 3 otherwise. Absent pseudo-labels never match branch 1.
inline int ladder_level(const LabelTriple& a, const LabelTriple& b) {
  if (a.instance_id == b.instance_id) return 0;
  if (a.coarse == b.coarse && a.fine_pseudo && b.fine_pseudo && *a.fine_pseudo == *b.fine_pseudo) return 1;
  if (a.coarse == b.coarse) return 2;
  return 3;
}

inline Matrix target_matrix(std::span<const LabelTriple> labels_q, std::span<const LabelTriple> labels_k,
                            const TargetDistances& t) {
  const double ladder[4] = {t.d0, t.d1, t.d2, t.d3};
  Matrix M(static_cast<Eigen::Index>(labels_q.size()), static_cast<Eigen::Index>(labels_k.size()));
  for (std::size_t i = 0; i < labels_q.size(); ++i) {
    for (std::size_t j = 0; j < labels_k.size(); ++j) {
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ladder[ladder_level(labels_q[i], labels_k[j])];
    }
  }
  return M;
}

/// Mean over rows of KL(m̂_i || ŵ_i), each row normalized after adding kKlEps.
inline double hcm_loss(const Matrix& W, const Matrix& M) {
  if (W.rows() != M.rows() || W.cols() != M.cols()) throw ContractError("hcm_loss: W and M shapes differ");
  if (W.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    const Eigen::ArrayXd w = W.row(i).transpose().array() + kKlEps;
    const Eigen::ArrayXd m = M.row(i).transpose().array() + kKlEps;
    const Eigen::ArrayXd wh = w / w.sum();
    const Eigen::ArrayXd mh = m / m.sum();
    total += (mh * (mh / wh).log()).sum();
  }
  return total / static_cast<double>(W.rows());
}

/// d hcm_loss / d W. M is treated as a constant.
inline Matrix hcm_loss_grad(const Matrix& W, const Matrix& M) {
  if (W.rows() != M.rows() || W.cols() != M.cols()) throw ContractError("hcm_loss: W and M shapes differ");
  Matrix g(W.rows(), W.cols());
  const double inv_n = 1.0 / static_cast<double>(std::max<Eigen::Index>(W.rows(), 1));
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    const Eigen::ArrayXd w = W.row(i).transpose().array() + kKlEps;
    const Eigen::ArrayXd m = M.row(i).transpose().array() + kKlEps;
    const Eigen::ArrayXd mh = m / m.sum();
    g.row(i) = (inv_n * (1.0 / w.sum() - mh / w)).matrix().transpose();
  }
  return g;
}

inline double total_loss(double l_cls, double l_hcm, double alpha) {
  if (!(alpha >= 0.0)) throw ContractError("total_loss: alpha must be non-negative");
  if (alpha == 0.0) return l_cls;
  return l_cls + alpha * l_hcm;
}

struct StratumMeans {
  std::optional<double> d1;
  std::optional<double> d2;
};

/// Average W over same-fine (level 1) and same-coarse-different-fine (level 2)
/// pairs; same-instance pairs are excluded.
inline StratumMeans batch_stratum_means(const Matrix& W, std::span<const LabelTriple> labels_q,
                                        std::span<const LabelTriple> labels_k) {
  if (static_cast<std::size_t>(W.rows()) != labels_q.size() || static_cast<std::size_t>(W.cols()) != labels_k.size()) {
    throw ContractError("batch_stratum_means: label count does not match W");
  }
  double sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (std::size_t i = 0; i < labels_q.size(); ++i) {
    for (std::size_t j = 0; j < labels_k.size(); ++j) {
      const int level = ladder_level(labels_q[i], labels_k[j]);
      if (level == 1 || level == 2) {
        sum[level - 1] += W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        ++count[level - 1];
      }
    }
  }
  StratumMeans out;
  if (count[0] > 0) out.d1 = sum[0] / static_cast<double>(count[0]);
  if (count[1] > 0) out.d2 = sum[1] / static_cast<double>(count[1]);
  return out;
}

/// Momentum update d_l ← β·d_l + (1 − β)·d̄_l for each present stratum mean.
/// The first update of an epoch listed in `reinit_epochs` first resets d1, d2
/// to their initial values.
inline TargetDistances ahcd_update(TargetDistances t, const StratumMeans& means, int epoch,
                                   const std::set<int>& reinit_epochs) {
  if (reinit_epochs.contains(epoch) && t.last_reinit_epoch != epoch) {
    t.reset_middle();
    t.last_reinit_epoch = epoch;
  }
  if (means.d1) t.d1 = t.beta * t.d1 + (1.0 - t.beta) * *means.d1;
  if (means.d2) t.d2 = t.beta * t.d2 + (1.0 - t.beta) * *means.d2;
  return t;
}

}  // namespace pehcm
