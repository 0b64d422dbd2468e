#pragma once

// Coarse-class heads: the hyperbolic multinomial logistic regression used by
// the full method, and the plain linear softmax head used by the Euclidean
// ablation. Both consume projector outputs (pre-exp-map features) in batch
// form, one sample per row.

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pehcm/errors.hpp"
#include "pehcm/geometry.hpp"

namespace pehcm {

using Matrix = Eigen::MatrixXd;
using ClassLogits = Vector;

/// One hyperplane per coarse class. Row k of `p_raw` is the pre-map offset,
/// so the anchor is p_k = exp_map(p_raw.row(k)); row k of `normals` is a_k.
struct MlrParams {
  Matrix p_raw;
  Matrix normals;
  Curvature curvature{1.0};

  Eigen::Index num_classes() const { return normals.rows(); }
  Eigen::Index dim() const { return normals.cols(); }

  PoincarePoint anchor(Eigen::Index k) const {
    return exp_map(p_raw.row(k).transpose(), curvature);
  }

  static MlrParams init(Eigen::Index num_classes, Eigen::Index dim, Curvature c, std::mt19937_64& rng) {
    MlrParams p;
    p.curvature = c;
    p.p_raw = Matrix::Zero(num_classes, dim);
    p.normals.resize(num_classes, dim);
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    for (Eigen::Index k = 0; k < num_classes; ++k) {
      for (Eigen::Index j = 0; j < dim; ++j) p.normals(k, j) = gauss(rng);
    }
    return p;
  }

  /// Redraws any normal whose norm collapsed below 1e-8.
  void reinit_degenerate(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(dim())));
    for (Eigen::Index k = 0; k < num_classes(); ++k) {
      if (normals.row(k).norm() < 1e-8) {
        for (Eigen::Index j = 0; j < dim(); ++j) normals(k, j) = gauss(rng);
      }
    }
  }
};

/// Logits of one point: sign(<(−p_k) ⊕ z, a_k>)·|a_k|·d(z, H_k). sign(0) = +1.
inline ClassLogits mlr_logits(const PoincarePoint& z, const MlrParams& params) {
  if (!(z.curvature() == params.curvature)) throw ContractError("mlr_logits: curvature mismatch");
  if (z.dim() != params.dim()) throw ContractError("mlr_logits: dimension mismatch");
  ClassLogits out(params.num_classes());
  for (Eigen::Index k = 0; k < params.num_classes(); ++k) {
    const Vector a = params.normals.row(k).transpose();
    const PoincarePoint p = params.anchor(k);
    const double dist = hyperplane_distance(z, p, a);
    const double side = mobius_add(-p, z).coords().dot(a);
    out(k) = (side >= 0.0 ? 1.0 : -1.0) * a.norm() * dist;
  }
  return out;
}

/// Gradients produced by the batched hyperbolic head.
struct MlrGrads {
  Matrix features;  // d loss / d pre-map feature, one row per sample
  Matrix p_raw;
  Matrix normals;
};

namespace detail {

struct HeadEval {
  Matrix logits;
  std::vector<Vector> z;  // mapped points, kept for the backward pass
};

// Same quantity as mlr_logits, written as (|a|/√c)·asinh(2√c<m,a>/((1−c|m|²)|a|)),
// which folds the sign into the odd asinh and is differentiable everywhere.
inline double mlr_logit_smooth(const Vector& z, const Vector& p, const Vector& a, Curvature curv) {
  const double c = curv.value();
  const double s = curv.sqrt_c();
  const double an = a.norm();
  if (!(an > 0.0)) throw DegenerateHyperplane("mlr head: zero normal vector");
  auto parts = mobius_parts(-p, z, c);
  const Vector m = clip_to_ball(std::move(parts.raw), curv).coords();
  const double y = 2.0 * s * m.dot(a) / ((1.0 - c * m.squaredNorm()) * an);
  return an / s * std::asinh(y);
}

}  // namespace detail

/// Batched forward pass of the hyperbolic head on pre-map features.
inline Matrix mlr_forward(const Matrix& features, const MlrParams& params) {
  if (features.cols() != params.dim()) throw ContractError("mlr_forward: feature dimension mismatch");
  detail::count_hyperbolic_op();
  const Eigen::Index n = features.rows();
  const Eigen::Index K = params.num_classes();
  std::vector<Vector> anchors;
  anchors.reserve(static_cast<std::size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) anchors.push_back(params.anchor(k).coords());
  Matrix logits(n, K);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector z = exp_map(features.row(i).transpose(), params.curvature).coords();
    for (Eigen::Index k = 0; k < K; ++k) {
      logits(i, k) = detail::mlr_logit_smooth(z, anchors[static_cast<std::size_t>(k)],
                                              params.normals.row(k).transpose(), params.curvature);
    }
  }
  return logits;
}

/// Reverse pass of mlr_forward given d loss / d logits.
inline MlrGrads mlr_backward(const Matrix& features, const MlrParams& params, const Matrix& logits_bar) {
  detail::count_hyperbolic_op();
  const Curvature curv = params.curvature;
  const double c = curv.value();
  const double s = curv.sqrt_c();
  const Eigen::Index n = features.rows();
  const Eigen::Index K = params.num_classes();
  const Eigen::Index dim = params.dim();

  MlrGrads g{Matrix::Zero(n, dim), Matrix::Zero(K, dim), Matrix::Zero(K, dim)};
  std::vector<Vector> anchors;
  std::vector<Vector> anchor_bar(static_cast<std::size_t>(K), Vector::Zero(dim));
  for (Eigen::Index k = 0; k < K; ++k) anchors.push_back(params.anchor(k).coords());

  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector x = features.row(i).transpose();
    const Vector z = exp_map(x, curv).coords();
    Vector z_bar = Vector::Zero(dim);
    for (Eigen::Index k = 0; k < K; ++k) {
      const double gk = logits_bar(i, k);
      if (gk == 0.0) continue;
      const Vector& p = anchors[static_cast<std::size_t>(k)];
      const Vector a = params.normals.row(k).transpose();
      const Vector u = -p;
      auto parts = detail::mobius_parts(u, z, c);
      const Vector m = clip_to_ball(parts.raw, curv).coords();
      const double an = a.norm();
      const double ma = m.dot(a);
      const double mm = m.squaredNorm();
      const double shrink = 1.0 - c * mm;
      const double den = shrink * an;
      const double y = 2.0 * s * ma / den;
      const double dlogit_dy = (an / s) / std::sqrt(1.0 + y * y);

      const double ma_bar = gk * dlogit_dy * 2.0 * s / den;
      const double mm_bar = gk * dlogit_dy * y * c / shrink;
      const double an_bar = gk * (std::asinh(y) / s - dlogit_dy * y / an);

      const Vector m_bar = ma_bar * a + 2.0 * mm_bar * m;
      g.normals.row(k) += (ma_bar * m + (an_bar / an) * a).transpose();

      const MobiusVjp mv = mobius_add_vjp(u, z, curv, m_bar);
      anchor_bar[static_cast<std::size_t>(k)] -= mv.u_bar;
      z_bar += mv.v_bar;
    }
    g.features.row(i) = exp_map_vjp(x, curv, z_bar).transpose();
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    g.p_raw.row(k) = exp_map_vjp(params.p_raw.row(k).transpose(), curv,
                                 anchor_bar[static_cast<std::size_t>(k)]).transpose();
  }
  return g;
}

/// Linear softmax head for the Euclidean ablation: logits = X Wᵀ + b.
struct LinearHead {
  Matrix weights;  // classes × dim
  Vector bias;

  static LinearHead init(Eigen::Index num_classes, Eigen::Index dim, std::mt19937_64& rng) {
    LinearHead h;
    h.weights.resize(num_classes, dim);
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    for (Eigen::Index k = 0; k < num_classes; ++k) {
      for (Eigen::Index j = 0; j < dim; ++j) h.weights(k, j) = gauss(rng);
    }
    h.bias = Vector::Zero(num_classes);
    return h;
  }

  Matrix forward(const Matrix& features) const {
    if (features.cols() != weights.cols()) throw ContractError("linear head: feature dimension mismatch");
    return (features * weights.transpose()).rowwise() + bias.transpose();
  }
};

struct LinearHeadGrads {
  Matrix features;
  Matrix weights;
  Vector bias;
};

inline LinearHeadGrads linear_head_backward(const Matrix& features, const LinearHead& head, const Matrix& logits_bar) {
  return {logits_bar * head.weights, logits_bar.transpose() * features, logits_bar.colwise().sum().transpose()};
}

/// Row-wise softmax, shifted by the row max.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
    out.row(i) = e / e.sum();
  }
  return out;
}

inline void check_labels(std::span<const int> labels, Eigen::Index num_classes, Eigen::Index batch) {
  if (static_cast<Eigen::Index>(labels.size()) != batch) {
    throw ContractError("classification_loss: label count does not match batch size");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ContractError("classification_loss: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    }
  }
}

/// Mean cross-entropy. Labels are zero-based class indices.
inline double classification_loss(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.cols(), logits.rows());
  if (logits.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    total += lse - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

/// d classification_loss / d logits = (softmax − onehot)/N.
inline Matrix classification_loss_grad(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.cols(), logits.rows());
  Matrix g = softmax_rows(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) g(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  return g / static_cast<double>(std::max<Eigen::Index>(logits.rows(), 1));
}

}  // namespace pehcm
