#pragma once

// Encoder + projector MLP, the coarse head, the composite training loss with
// hand-written reverse-mode gradients, Adam, and a finite-difference checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pehcm/errors.hpp"
#include "pehcm/geometry.hpp"
#include "pehcm/hcm_loss.hpp"
#include "pehcm/mlr_head.hpp"

namespace pehcm {

/// Layer widths from input to projector output. The first `encoder_layers`
/// affine maps form the encoder; the rest form the projector. A rectifier
/// follows every affine map except the last.
struct MlpSpec {
  std::vector<int> layer_dims;
  int encoder_layers = 2;

  int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }

  void validate() const {
    if (layer_dims.size() < 2) throw ConfigError("mlp: need at least one layer");
    for (int d : layer_dims) {
      if (d < 1) throw ConfigError("mlp: layer dims must be positive");
    }
    if (encoder_layers < 0 || encoder_layers > num_layers()) throw ConfigError("mlp: bad encoder layer count");
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

enum class Space { euclidean, hyperbolic };

inline const char* to_string(Space s) { return s == Space::euclidean ? "euclidean" : "hyperbolic"; }

struct NamedTensor {
  std::string name;
  std::span<double> values;
};

struct Model {
  MlpSpec spec;
  std::vector<Matrix> weights;  // out × in
  std::vector<Vector> biases;
  Space space = Space::hyperbolic;
  MlrParams mlr;
  LinearHead linear;

  int num_classes() const {
    return static_cast<int>(space == Space::hyperbolic ? mlr.num_classes() : linear.weights.rows());
  }
  Curvature curvature() const { return mlr.curvature; }

  /// Gaussian init with std √(2/fan_in), zero biases; head per its own rule.
  static Model init(const MlpSpec& spec, Space space, int num_classes, Curvature c, std::mt19937_64& rng) {
    spec.validate();
    if (num_classes < 1) throw ConfigError("model: need at least one class");
    Model m;
    m.spec = spec;
    m.space = space;
    for (int l = 0; l < spec.num_layers(); ++l) {
      const int in = spec.layer_dims[static_cast<std::size_t>(l)];
      const int out = spec.layer_dims[static_cast<std::size_t>(l) + 1];
      std::normal_distribution<double> g(0.0, std::sqrt(2.0 / in));
      Matrix W(out, in);
      for (int r = 0; r < out; ++r) {
        for (int col = 0; col < in; ++col) W(r, col) = g(rng);
      }
      m.weights.push_back(std::move(W));
      m.biases.push_back(Vector::Zero(out));
    }
    if (space == Space::hyperbolic) {
      m.mlr = MlrParams::init(num_classes, spec.output_dim(), c, rng);
    } else {
      m.mlr.curvature = c;
      m.linear = LinearHead::init(num_classes, spec.output_dim(), rng);
    }
    return m;
  }

  /// Same shapes, all zeros.
  Model zeros_like() const {
    Model z = *this;
    for (auto& t : z.tensors()) std::fill(t.values.begin(), t.values.end(), 0.0);
    return z;
  }

  std::vector<NamedTensor> tensors() {
    std::vector<NamedTensor> out;
    auto add = [&](std::string name, auto& eig) { out.push_back({std::move(name), {eig.data(), static_cast<std::size_t>(eig.size())}}); };
    for (std::size_t l = 0; l < weights.size(); ++l) {
      add("layer" + std::to_string(l) + ".weight", weights[l]);
      add("layer" + std::to_string(l) + ".bias", biases[l]);
    }
    if (space == Space::hyperbolic) {
      add("mlr.p_raw", mlr.p_raw);
      add("mlr.normals", mlr.normals);
    } else {
      add("linear.weight", linear.weights);
      add("linear.bias", linear.bias);
    }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& t : tensors()) n += t.values.size();
    return n;
  }
};

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;   // affine outputs per layer
  std::vector<Matrix> post;  // layer outputs after the rectifier (last one = projector output)
  const Matrix& encoder_out(const MlpSpec& spec) const {
    return spec.encoder_layers == 0 ? input : post[static_cast<std::size_t>(spec.encoder_layers) - 1];
  }
  const Matrix& projector_out() const { return post.back(); }
};

inline ForwardCache forward(const Matrix& x, const Model& model) {
  if (x.cols() != model.spec.input_dim()) {
    throw ContractError("forward: input dim " + std::to_string(x.cols()) + " does not match spec " +
                        std::to_string(model.spec.input_dim()));
  }
  ForwardCache cache;
  cache.input = x;
  const Matrix* h = &cache.input;
  const int L = model.spec.num_layers();
  for (int l = 0; l < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    Matrix z = (*h) * model.weights[ul].transpose();
    z.rowwise() += model.biases[ul].transpose();
    cache.pre.push_back(z);
    if (l + 1 < L) z = z.cwiseMax(0.0);
    cache.post.push_back(std::move(z));
    h = &cache.post.back();
  }
  return cache;
}

/// Accumulates parameter gradients of the MLP into `grads` given d loss / d projector output.
inline void backward_mlp(const ForwardCache& cache, const Model& model, Matrix d_out, Model& grads) {
  const int L = model.spec.num_layers();
  for (int l = L - 1; l >= 0; --l) {
    const auto ul = static_cast<std::size_t>(l);
    if (l + 1 < L) d_out = d_out.cwiseProduct((cache.pre[ul].array() > 0.0).cast<double>().matrix());
    const Matrix& in = l == 0 ? cache.input : cache.post[ul - 1];
    grads.weights[ul] += d_out.transpose() * in;
    grads.biases[ul] += d_out.colwise().sum().transpose();
    if (l > 0) d_out = d_out * model.weights[ul];
  }
}

/// Coarse logits for projector outputs. The Euclidean head never touches
/// hyperbolic code.
inline Matrix head_logits(const Matrix& projected, const Model& model) {
  return model.space == Space::hyperbolic ? mlr_forward(projected, model.mlr) : model.linear.forward(projected);
}

struct Batch {
  Matrix view_q;
  Matrix view_k;
  std::vector<LabelTriple> labels;  // shared by both views
  std::vector<int> coarse;
};

struct LossOptions {
  double alpha = 800.0;
  bool hcm = true;
  TargetDistances targets;
};

struct LossResult {
  double l_cls = 0.0;
  double l_hcm = 0.0;
  double total = 0.0;
  Matrix logits_q;
  Matrix projected_q;
  Matrix projected_k;
  Matrix W;  // empty when the HCM term is off
};

inline bool hcm_active(const LossOptions& opt) { return opt.hcm && opt.alpha > 0.0; }

/// L = L_cls(branch Q) + α·L_hcm(Q, K). Fills `grads` (which must be shaped
/// like `model`) when non-null.
inline LossResult composite_loss(const Model& model, const Batch& batch, const LossOptions& opt, Model* grads) {
  LossResult r;
  const ForwardCache fq = forward(batch.view_q, model);
  r.projected_q = fq.projector_out();
  r.logits_q = head_logits(r.projected_q, model);
  r.l_cls = classification_loss(r.logits_q, batch.coarse);

  const bool use_hcm = hcm_active(opt);
  ForwardCache fk;
  if (use_hcm) {
    fk = forward(batch.view_k, model);
    r.projected_k = fk.projector_out();
    r.W = distance_matrix(r.projected_q, r.projected_k);
    const Matrix M = target_matrix(batch.labels, batch.labels, opt.targets);
    r.l_hcm = hcm_loss(r.W, M);
    r.total = total_loss(r.l_cls, r.l_hcm, opt.alpha);
    if (grads) {
      const Matrix dW = opt.alpha * hcm_loss_grad(r.W, M);
      const FeatureGrads fg = distance_matrix_backward(r.projected_q, r.projected_k, dW);
      backward_mlp(fk, model, fg.k, *grads);
      Matrix dq = fg.q;
      const Matrix dlogits = classification_loss_grad(r.logits_q, batch.coarse);
      if (model.space == Space::hyperbolic) {
        const MlrGrads hg = mlr_backward(r.projected_q, model.mlr, dlogits);
        grads->mlr.p_raw += hg.p_raw;
        grads->mlr.normals += hg.normals;
        dq += hg.features;
      } else {
        const LinearHeadGrads hg = linear_head_backward(r.projected_q, model.linear, dlogits);
        grads->linear.weights += hg.weights;
        grads->linear.bias += hg.bias;
        dq += hg.features;
      }
      backward_mlp(fq, model, dq, *grads);
    }
    return r;
  }

  r.total = total_loss(r.l_cls, 0.0, 0.0);
  if (grads) {
    const Matrix dlogits = classification_loss_grad(r.logits_q, batch.coarse);
    Matrix dq;
    if (model.space == Space::hyperbolic) {
      const MlrGrads hg = mlr_backward(r.projected_q, model.mlr, dlogits);
      grads->mlr.p_raw += hg.p_raw;
      grads->mlr.normals += hg.normals;
      dq = hg.features;
    } else {
      const LinearHeadGrads hg = linear_head_backward(r.projected_q, model.linear, dlogits);
      grads->linear.weights += hg.weights;
      grads->linear.bias += hg.bias;
      dq = hg.features;
    }
    backward_mlp(fq, model, dq, *grads);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 added to the gradient
};

struct AdamState {
  Model first;   // moment buffers shaped like the model
  Model second;
  std::uint64_t step = 0;

  static AdamState for_model(const Model& m) { return {m.zeros_like(), m.zeros_like(), 0}; }
};

/// Bias-corrected Adam update in place.
inline void adam_step(Model& params, Model& grads, AdamState& state, const AdamOptions& opt) {
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.first.tensors();
  auto v = state.second.tensors();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw ContractError("adam_step: parameter/gradient layouts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k].values.size() != g[k].values.size()) throw ContractError("adam_step: shape mismatch in " + p[k].name);
    for (std::size_t i = 0; i < p[k].values.size(); ++i) {
      const double grad = g[k].values[i] + opt.weight_decay * p[k].values[i];
      double& mi = m[k].values[i];
      double& vi = v[k].values[i];
      mi = opt.beta1 * mi + (1.0 - opt.beta1) * grad;
      vi = opt.beta2 * vi + (1.0 - opt.beta2) * grad * grad;
      p[k].values[i] -= opt.lr * (mi / c1) / (std::sqrt(vi / c2) + opt.eps);
    }
  }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// pre-clip norm. max_norm ≤ 0 disables clipping.
inline double clip_grad_norm(Model& grads, double max_norm) {
  double sq = 0.0;
  for (auto& t : grads.tensors()) {
    for (double x : t.values) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& t : grads.tensors()) {
      for (double& x : t.values) x *= s;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> groups;
  double max_rel_error = 0.0;
  bool passed(double tol) const { return max_rel_error < tol; }
};

/// |analytic − numeric| / max(|analytic|, |numeric|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares `analytic` against central differences of `loss` for every
/// parameter of `model`.
inline GradCheckReport gradient_check(Model model, Model analytic, const std::function<double(const Model&)>& loss,
                                      double h = 1e-5) {
  GradCheckReport report;
  auto params = model.tensors();
  auto grads = analytic.tensors();
  for (std::size_t k = 0; k < params.size(); ++k) {
    GradCheckEntry e{params[k].name};
    for (std::size_t i = 0; i < params[k].values.size(); ++i) {
      double& x = params[k].values[i];
      const double saved = x;
      x = saved + h;
      const double up = loss(model);
      x = saved - h;
      const double down = loss(model);
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grads[k].values[i];
      e.max_rel_error = std::max(e.max_rel_error, relative_error(a, numeric));
      e.max_abs_error = std::max(e.max_abs_error, std::abs(a - numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.groups.push_back(std::move(e));
  }
  return report;
}

}  // namespace pehcm
