#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pehcm/mlr_head.hpp"
#include "test_util.hpp"

using namespace pehcm;

namespace {

MlrParams params_from(const Matrix& p_raw, const Matrix& normals, double c) {
  MlrParams p;
  p.p_raw = p_raw;
  p.normals = normals;
  p.curvature = Curvature(c);
  return p;
}

}  // namespace

TEST(MlrLogits, PointOnAnchorGivesZero) {
  std::mt19937_64 rng(1);
  const Matrix p_raw = test::random_matrix(rng, 3, 4, 0.3);
  const auto params = params_from(p_raw, test::random_matrix(rng, 3, 4), 1.0);
  for (Eigen::Index k = 0; k < 3; ++k) {
    const auto logits = mlr_logits(params.anchor(k), params);
    EXPECT_NEAR(logits(k), 0.0, 1e-12);
  }
}

TEST(MlrLogits, OriginAnchorScalarExample) {
  Matrix normals(1, 2);
  normals << 1.0, 0.0;
  const auto params = params_from(Matrix::Zero(1, 2), normals, 1.0);
  Vector z(2);
  z << 0.5, 0.0;
  const auto logits = mlr_logits(PoincarePoint(z, Curvature(1.0)), params);
  EXPECT_NEAR(logits(0), static_cast<double>(std::asinh(4.0L / 3.0L)), 1e-14);
  EXPECT_NEAR(logits(0), 1.098612, 1e-6);
  // The opposite side flips the sign.
  const auto neg = mlr_logits(PoincarePoint(-z, Curvature(1.0)), params);
  EXPECT_NEAR(neg(0), -logits(0), 1e-14);
}

TEST(MlrLogits, DegenerateNormalThrows) {
  const auto params = params_from(Matrix::Zero(2, 2), Matrix::Zero(2, 2), 1.0);
  EXPECT_THROW(mlr_logits(PoincarePoint::origin(2, Curvature(1.0)), params), DegenerateHyperplane);
  EXPECT_THROW(mlr_forward(Matrix::Ones(1, 2), params), DegenerateHyperplane);
}

TEST(MlrLogits, CurvatureMismatchIsContractError) {
  std::mt19937_64 rng(2);
  const auto params = MlrParams::init(2, 3, Curvature(1.0), rng);
  EXPECT_THROW(mlr_logits(PoincarePoint::origin(3, Curvature(0.5)), params), ContractError);
}

TEST(MlrForward, MatchesLiteralComposition) {
  std::mt19937_64 rng(3);
  for (double c : {1e-3, 1.0}) {
    const auto params = params_from(test::random_matrix(rng, 4, 5, 0.4), test::random_matrix(rng, 4, 5), c);
    const Matrix X = test::random_matrix(rng, 6, 5, c < 0.1 ? 5.0 : 0.7);
    const Matrix L = mlr_forward(X, params);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const auto ref = mlr_logits(exp_map(X.row(i).transpose(), params.curvature), params);
      for (Eigen::Index k = 0; k < 4; ++k) EXPECT_NEAR(L(i, k), ref(k), 1e-9 * (1.0 + std::abs(ref(k))));
    }
  }
}

TEST(MlrBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (double c : {1e-3, 1.0}) {
    const auto params = params_from(test::random_matrix(rng, 3, 4, 0.3), test::random_matrix(rng, 3, 4), c);
    const Matrix X = test::random_matrix(rng, 5, 4, c < 0.1 ? 4.0 : 0.6);
    const Matrix Lbar = test::random_matrix(rng, 5, 3);
    const auto g = mlr_backward(X, params, Lbar);
    auto obj = [&](const MlrParams& p, const Matrix& x) { return (mlr_forward(x, p).array() * Lbar.array()).sum(); };
    const double h = 1e-6;
    const Matrix nx = test::numeric_gradient([&](const Matrix& x) { return obj(params, x); }, X, h);
    const Matrix np = test::numeric_gradient(
        [&](const Matrix& pr) { return obj(params_from(pr, params.normals, c), X); }, params.p_raw, h);
    const Matrix na = test::numeric_gradient(
        [&](const Matrix& a) { return obj(params_from(params.p_raw, a, c), X); }, params.normals, h);
    EXPECT_LE((g.features - nx).cwiseAbs().maxCoeff(), 1e-6 * (1.0 + nx.cwiseAbs().maxCoeff()));
    EXPECT_LE((g.p_raw - np).cwiseAbs().maxCoeff(), 1e-6 * (1.0 + np.cwiseAbs().maxCoeff()));
    EXPECT_LE((g.normals - na).cwiseAbs().maxCoeff(), 1e-6 * (1.0 + na.cwiseAbs().maxCoeff()));
  }
}

TEST(MlrParams, InitShapesAndZeroAnchors) {
  std::mt19937_64 rng(5);
  const auto p = MlrParams::init(5, 32, Curvature(1e-3), rng);
  EXPECT_EQ(p.num_classes(), 5);
  EXPECT_EQ(p.dim(), 32);
  EXPECT_EQ(p.p_raw, Matrix::Zero(5, 32));
  for (Eigen::Index k = 0; k < 5; ++k) EXPECT_GT(p.normals.row(k).norm(), 0.0);
}

TEST(MlrParams, ReinitDegenerateOnlyTouchesCollapsedRows) {
  std::mt19937_64 rng(6);
  auto p = MlrParams::init(3, 4, Curvature(1.0), rng);
  const Matrix before = p.normals;
  p.normals.row(1).setZero();
  p.reinit_degenerate(rng);
  EXPECT_EQ(p.normals.row(0), before.row(0));
  EXPECT_EQ(p.normals.row(2), before.row(2));
  EXPECT_GT(p.normals.row(1).norm(), 0.0);
}

TEST(ClassificationLoss, SaturatedCorrectPrediction) {
  Matrix logits = Matrix::Zero(1, 3);
  logits(0, 2) = 1e6;
  const std::vector<int> y{2};
  EXPECT_NEAR(classification_loss(logits, y), 0.0, 1e-12);
}

TEST(ClassificationLoss, UniformLogitsGiveLogK) {
  const Matrix logits = Matrix::Constant(3, 4, 0.7);
  const std::vector<int> y{0, 1, 3};
  EXPECT_NEAR(classification_loss(logits, y), std::log(4.0), 1e-15);
  EXPECT_NEAR(classification_loss(logits, y), 1.386294, 1e-6);
}

TEST(ClassificationLoss, TwoClassScalarExample) {
  Matrix logits(1, 2);
  logits << 1.0, 0.0;
  const std::vector<int> y{0};
  const long double e = std::exp(1.0L);
  EXPECT_NEAR(classification_loss(logits, y), static_cast<double>(-std::log(e / (e + 1.0L))), 1e-15);
  EXPECT_NEAR(classification_loss(logits, y), 0.313262, 1e-6);
}

TEST(ClassificationLoss, LabelOutOfRangeIsContractError) {
  const Matrix logits = Matrix::Zero(2, 3);
  EXPECT_THROW(classification_loss(logits, std::vector<int>{0, 3}), ContractError);
  EXPECT_THROW(classification_loss(logits, std::vector<int>{-1, 0}), ContractError);
  EXPECT_THROW(classification_loss(logits, std::vector<int>{0}), ContractError);
}

TEST(ClassificationLoss, GradientIsSoftmaxMinusOnehotOverN) {
  std::mt19937_64 rng(7);
  const Matrix logits = test::random_matrix(rng, 4, 3, 2.0);
  const std::vector<int> y{0, 2, 1, 2};
  const Matrix g = classification_loss_grad(logits, y);
  const Matrix num = test::numeric_gradient([&](const Matrix& l) { return classification_loss(l, y); }, logits, 1e-6);
  EXPECT_LE((g - num).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(LinearHead, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto head = LinearHead::init(3, 4, rng);
  head.bias = test::random_vector(rng, 3, 1.0);
  const Matrix X = test::random_matrix(rng, 5, 4);
  const Matrix Lbar = test::random_matrix(rng, 5, 3);
  const auto g = linear_head_backward(X, head, Lbar);
  const Matrix nw = test::numeric_gradient(
      [&](const Matrix& w) {
        LinearHead h = head;
        h.weights = w;
        return (h.forward(X).array() * Lbar.array()).sum();
      },
      head.weights, 1e-6);
  EXPECT_LE((g.weights - nw).cwiseAbs().maxCoeff(), 1e-8);
  const Matrix nx =
      test::numeric_gradient([&](const Matrix& x) { return (head.forward(x).array() * Lbar.array()).sum(); }, X, 1e-6);
  EXPECT_LE((g.features - nx).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((g.bias - Lbar.colwise().sum().transpose()).norm(), 1e-15);
}

TEST(LinearHead, DoesNotTouchHyperbolicCode) {
  std::mt19937_64 rng(9);
  const auto head = LinearHead::init(2, 3, rng);
  const auto before = hyperbolic_op_counter().load();
  const Matrix L = head.forward(test::random_matrix(rng, 4, 3));
  linear_head_backward(test::random_matrix(rng, 4, 3), head, L);
  EXPECT_EQ(hyperbolic_op_counter().load(), before);
}
