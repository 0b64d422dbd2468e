#pragma once

// Finite-difference check of the full composite loss on tiny networks.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pehcm/network.hpp"

namespace pehcm {

struct GradcheckCase {
  std::string name;
  Space space = Space::hyperbolic;
  double curvature = 1.0;
  double alpha = 800.0;
  double input_scale = 0.3;
};

struct GradcheckOptions {
  std::vector<GradcheckCase> cases{
      {"hyperbolic c=1 alpha=0", Space::hyperbolic, 1.0, 0.0, 0.3},
      {"hyperbolic c=1 alpha=800", Space::hyperbolic, 1.0, 800.0, 0.3},
      {"hyperbolic c=0.001 alpha=800", Space::hyperbolic, 0.001, 800.0, 1.0},
      {"euclidean alpha=800", Space::euclidean, 1.0, 800.0, 1.0},
  };
  std::vector<int> layer_dims{5, 8, 8, 8, 4};  // every width ≤ 8
  int encoder_layers = 2;
  int batch = 4;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  /// Test hook: applied to the analytic gradients before comparison.
  std::function<void(Model&)> corrupt;
};

struct GradcheckCaseResult {
  GradcheckCase spec;
  GradCheckReport report;
};

struct GradcheckResult {
  std::vector<GradcheckCaseResult> cases;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// A batch of four samples covering every ladder level: samples 0 and 1 share a
/// coarse class with different pseudo-labels, sample 2 shares sample 0's
/// pseudo-label in the same coarse class, sample 3 sits in another class with
/// no pseudo-label.
inline Batch gradcheck_batch(int batch, int input_dim, double scale, std::mt19937_64& rng) {
  Batch b;
  b.view_q.resize(batch, input_dim);
  b.view_k.resize(batch, input_dim);
  std::normal_distribution<double> g(0.0, scale);
  for (int i = 0; i < batch; ++i) {
    for (int j = 0; j < input_dim; ++j) {
      const double base = g(rng);
      b.view_q(i, j) = base + 0.1 * g(rng);
      b.view_k(i, j) = base + 0.1 * g(rng);
    }
    LabelTriple t;
    t.instance_id = i;
    t.coarse = (i == 3) ? 1 : 0;
    if (i < 3) t.fine_pseudo = (i == 1) ? 1 : 0;
    if (i >= 4) t.coarse = i % 3;
    b.labels.push_back(t);
    b.coarse.push_back(t.coarse);
  }
  return b;
}

inline GradcheckResult run_gradcheck(const GradcheckOptions& opt) {
  GradcheckResult out;
  out.passed = true;
  MlpSpec spec{opt.layer_dims, opt.encoder_layers};
  for (std::size_t ci = 0; ci < opt.cases.size(); ++ci) {
    const auto& gc = opt.cases[ci];
    const int classes = 3;
    std::mt19937_64 rng(opt.seed + ci);
    Model model;
    Batch batch;
    // Redraw until no projector row is exactly zero (a dead tiny net).
    for (int attempt = 0;; ++attempt) {
      model = Model::init(spec, gc.space, classes, Curvature(gc.curvature), rng);
      if (gc.space == Space::hyperbolic) {
        std::normal_distribution<double> g(0.0, 0.1);
        for (Eigen::Index i = 0; i < model.mlr.p_raw.size(); ++i) model.mlr.p_raw.data()[i] = g(rng);
      }
      batch = gradcheck_batch(opt.batch, spec.input_dim(), gc.input_scale, rng);
      const Matrix pq = forward(batch.view_q, model).projector_out();
      const Matrix pk = forward(batch.view_k, model).projector_out();
      if ((pq.rowwise().norm().minCoeff() > 1e-6 && pk.rowwise().norm().minCoeff() > 1e-6) || attempt >= 32) break;
    }
    LossOptions lopt;
    lopt.alpha = gc.alpha;
    lopt.hcm = gc.alpha > 0.0;
    Model grads = model.zeros_like();
    composite_loss(model, batch, lopt, &grads);
    if (opt.corrupt) opt.corrupt(grads);
    auto loss = [&](const Model& m) { return composite_loss(m, batch, lopt, nullptr).total; };
    GradcheckCaseResult res{gc, gradient_check(model, grads, loss, opt.step)};
    out.max_rel_error = std::max(out.max_rel_error, res.report.max_rel_error);
    if (!res.report.passed(opt.tolerance)) out.passed = false;
    out.cases.push_back(std::move(res));
  }
  return out;
}

}  // namespace pehcm
