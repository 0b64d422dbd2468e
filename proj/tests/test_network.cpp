#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "pehcm/gradcheck.hpp"
#include "pehcm/network.hpp"
#include "test_util.hpp"

using namespace pehcm;

namespace {

Model tiny_model(Space space, double c, std::uint64_t seed, std::vector<int> dims = {5, 8, 8, 8, 4}) {
  std::mt19937_64 rng(seed);
  const int encoder_layers = std::clamp(static_cast<int>(dims.size()) - 2, 0, 2);
  return Model::init(MlpSpec{std::move(dims), encoder_layers}, space, 3, Curvature(c), rng);
}

}  // namespace

TEST(Mlp, ZeroParametersGiveZeroOutput) {
  Model m = tiny_model(Space::hyperbolic, 1.0, 1);
  for (auto& t : m.tensors()) std::fill(t.values.begin(), t.values.end(), 0.0);
  std::mt19937_64 rng(2);
  EXPECT_EQ(forward(test::random_matrix(rng, 3, 5), m).projector_out(), Matrix::Zero(3, 4));
}

TEST(Mlp, IdentitySingleLayer) {
  Model m = tiny_model(Space::euclidean, 1.0, 1, {3, 3});
  m.weights[0] = Matrix::Identity(3, 3);
  std::mt19937_64 rng(3);
  const Matrix x = test::random_matrix(rng, 4, 3);
  EXPECT_EQ(forward(x, m).projector_out(), x);
}

TEST(Mlp, TwoLayerMatchesHandArithmetic) {
  Model m = tiny_model(Space::euclidean, 1.0, 4, {2, 3, 2});
  m.weights[0] << 1, -1, 0.5, 2, -3, 0.25;
  m.biases[0] << 0.1, -0.2, 0.3;
  m.weights[1] << 1, 2, 3, -1, 0.5, -2;
  m.biases[1] << 0.0, 1.0;
  Matrix x(1, 2);
  x << 0.4, 0.7;
  // Hidden: (0.4−0.7+0.1, 0.2+1.4−0.2, −1.2+0.175+0.3) = (−0.2, 1.4, −0.725) → ReLU (0, 1.4, 0).
  // Output: (2·1.4, 0.5·1.4 + 1) = (2.8, 1.7).
  const Matrix y = forward(x, m).projector_out();
  EXPECT_NEAR(y(0, 0), 2.8, 1e-15);
  EXPECT_NEAR(y(0, 1), 1.7, 1e-15);
}

TEST(Mlp, InputShapeMismatch) {
  const Model m = tiny_model(Space::hyperbolic, 1.0, 1);
  EXPECT_THROW(forward(Matrix::Ones(2, 4), m), ContractError);
}

TEST(Mlp, EncoderOutputIsAfterEncoderLayers) {
  const Model m = tiny_model(Space::hyperbolic, 1.0, 5);
  std::mt19937_64 rng(6);
  const auto cache = forward(test::random_matrix(rng, 2, 5), m);
  EXPECT_EQ(&cache.encoder_out(m.spec), &cache.post[1]);
  EXPECT_GE(cache.encoder_out(m.spec).minCoeff(), 0.0);
}

TEST(CompositeLoss, AlphaZeroClassifierGradientIsClosedForm) {
  // Euclidean toy: the linear head gradient is (softmax − onehot)ᵀ · features / N.
  Model m = tiny_model(Space::euclidean, 1.0, 7);
  std::mt19937_64 rng(8);
  const Batch b = gradcheck_batch(4, 5, 1.0, rng);
  LossOptions opt;
  opt.alpha = 0.0;
  Model g = m.zeros_like();
  const auto r = composite_loss(m, b, opt, &g);
  EXPECT_EQ(r.total, r.l_cls);
  Matrix P = softmax_rows(r.logits_q);
  for (int i = 0; i < 4; ++i) P(i, b.coarse[static_cast<std::size_t>(i)]) -= 1.0;
  P /= 4.0;
  EXPECT_LE((g.linear.weights - P.transpose() * r.projected_q).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((g.linear.bias - P.colwise().sum().transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CompositeLoss, TotalCombinesTerms) {
  Model m = tiny_model(Space::hyperbolic, 1.0, 9);
  m.biases.back().setConstant(0.1);  // no all-zero projector rows
  std::mt19937_64 rng(10);
  const Batch b = gradcheck_batch(4, 5, 0.5, rng);
  LossOptions opt;
  const auto r = composite_loss(m, b, opt, nullptr);
  EXPECT_DOUBLE_EQ(r.total, r.l_cls + 800.0 * r.l_hcm);
  opt.hcm = false;
  const auto off = composite_loss(m, b, opt, nullptr);
  EXPECT_EQ(off.total, off.l_cls);
  EXPECT_EQ(off.l_hcm, 0.0);
}

TEST(CompositeLoss, DeadUnitHasExactlyZeroGradient) {
  Model m = tiny_model(Space::hyperbolic, 1.0, 11);
  m.weights[0].row(2).setZero();
  m.biases[0](2) = -1.0;  // unit 2 of layer 0 never fires
  std::mt19937_64 rng(12);
  const Batch b = gradcheck_batch(4, 5, 0.5, rng);
  Model g = m.zeros_like();
  composite_loss(m, b, LossOptions{}, &g);
  EXPECT_EQ(g.weights[0].row(2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.biases[0](2), 0.0);
  EXPECT_EQ(g.weights[1].col(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(CompositeLoss, EuclideanPathRunsNoHyperbolicCode) {
  const Model m = tiny_model(Space::euclidean, 1.0, 13);
  std::mt19937_64 rng(14);
  const Batch b = gradcheck_batch(4, 5, 1.0, rng);
  const auto before = hyperbolic_op_counter().load();
  Model g = m.zeros_like();
  composite_loss(m, b, LossOptions{}, &g);
  EXPECT_EQ(hyperbolic_op_counter().load(), before);
}

TEST(Gradcheck, DefaultCasesPass) {
  const auto res = run_gradcheck({});
  ASSERT_EQ(res.cases.size(), 4u);
  bool saw_alpha0 = false, saw_alpha = false;
  for (const auto& c : res.cases) {
    EXPECT_LT(c.report.max_rel_error, 1e-4) << c.spec.name;
    saw_alpha0 |= c.spec.alpha == 0.0;
    saw_alpha |= c.spec.alpha > 0.0;
    EXPECT_FALSE(c.report.groups.empty());
  }
  EXPECT_TRUE(saw_alpha0 && saw_alpha);
  EXPECT_TRUE(res.passed);
}

TEST(Gradcheck, CorruptedBackwardIsCaught) {
  GradcheckOptions opt;
  opt.corrupt = [](Model& g) { g.weights[1] *= 1.01; };
  const auto res = run_gradcheck(opt);
  EXPECT_FALSE(res.passed);
  EXPECT_GT(res.max_rel_error, 1e-3);
}

TEST(Gradcheck, RelativeErrorFloor) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-3);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Model m = tiny_model(Space::hyperbolic, 1.0, 15);
  const Model before = m;
  Model g = m.zeros_like();
  auto st = AdamState::for_model(m);
  for (int i = 0; i < 3; ++i) adam_step(m, g, st, {});
  for (std::size_t l = 0; l < m.weights.size(); ++l) EXPECT_EQ(m.weights[l], before.weights[l]);
  EXPECT_EQ(m.mlr.normals, before.mlr.normals);
}

TEST(Adam, ZeroLearningRateLeavesParameters) {
  Model m = tiny_model(Space::hyperbolic, 1.0, 16);
  const Model before = m;
  Model g = m.zeros_like();
  for (auto& t : g.tensors()) std::fill(t.values.begin(), t.values.end(), 0.37);
  auto st = AdamState::for_model(m);
  AdamOptions opt;
  opt.lr = 0.0;
  adam_step(m, g, st, opt);
  for (std::size_t l = 0; l < m.weights.size(); ++l) EXPECT_EQ(m.weights[l], before.weights[l]);
}

TEST(Adam, FirstStepMovesByLrAgainstSign) {
  Model m = tiny_model(Space::euclidean, 1.0, 17);
  const Model before = m;
  Model g = m.zeros_like();
  std::mt19937_64 rng(18);
  for (auto& t : g.tensors()) {
    for (double& x : t.values) x = test::random_vector(rng, 1, 1.0)(0);
  }
  auto st = AdamState::for_model(m);
  AdamOptions opt;
  opt.lr = 0.01;
  adam_step(m, g, st, opt);
  auto p = m.tensors();
  auto p0 = const_cast<Model&>(before).tensors();
  auto gt = g.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].values.size(); ++i) {
      const double gi = gt[k].values[i];
      // m̂ = g, v̂ = g², step = lr·g/(|g| + eps).
      const double expect = -opt.lr * gi / (std::abs(gi) + opt.eps);
      EXPECT_NEAR(p[k].values[i] - p0[k].values[i], expect, 1e-15);
    }
  }
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    Model m = tiny_model(Space::hyperbolic, 1e-3, 19);
    std::mt19937_64 rng(20);
    const Batch b = gradcheck_batch(4, 5, 1.0, rng);
    auto st = AdamState::for_model(m);
    for (int s = 0; s < 20; ++s) {
      Model g = m.zeros_like();
      composite_loss(m, b, LossOptions{}, &g);
      adam_step(m, g, st, {});
    }
    return m;
  };
  Model a = run(), b = run();
  auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t k = 0; k < ta.size(); ++k) {
    EXPECT_TRUE(std::equal(ta[k].values.begin(), ta[k].values.end(), tb[k].values.begin())) << ta[k].name;
  }
}

TEST(ClipGradNorm, RescalesToMaxNorm) {
  Model m = tiny_model(Space::euclidean, 1.0, 21);
  Model g = m.zeros_like();
  for (auto& t : g.tensors()) std::fill(t.values.begin(), t.values.end(), 1.0);
  const double n = std::sqrt(static_cast<double>(g.parameter_count()));
  EXPECT_NEAR(clip_grad_norm(g, 2.0), n, 1e-12);
  EXPECT_NEAR(clip_grad_norm(g, 0.0), 2.0, 1e-12);
}

TEST(Model, TensorNamesAndCounts) {
  Model h = tiny_model(Space::hyperbolic, 1.0, 22);
  Model e = tiny_model(Space::euclidean, 1.0, 22);
  const auto th = h.tensors();
  EXPECT_EQ(th.front().name, "layer0.weight");
  EXPECT_EQ(th[th.size() - 2].name, "mlr.p_raw");
  EXPECT_EQ(e.tensors().back().name, "linear.bias");
  // 5·8+8 + 8·8+8 + 8·8+8 + 8·4+4 + 2·(3·4)
  EXPECT_EQ(h.parameter_count(), 48u + 72u + 72u + 36u + 24u);
}
