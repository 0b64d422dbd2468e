#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "pehcm/eval.hpp"
#include "test_util.hpp"

using namespace pehcm;

namespace {

PoolLabels make_pool(int n_coarse, int fines_per_coarse, int per_fine) {
  PoolLabels p;
  for (int c = 0; c < n_coarse; ++c) {
    for (int f = 0; f < fines_per_coarse; ++f) {
      for (int i = 0; i < per_fine; ++i) {
        p.fine.push_back(c * fines_per_coarse + f);
        p.coarse.push_back(c);
      }
    }
  }
  return p;
}

}  // namespace

TEST(SampleEpisode, StandardCounts) {
  const auto pool = make_pool(5, 4, 20);
  std::mt19937_64 rng(1);
  const auto ep = sample_episode(pool, EpisodeSpec{5, 1, 15, EpisodeMode::standard, 1}, rng);
  EXPECT_EQ(ep.classes.size(), 5u);
  EXPECT_EQ(ep.support.size(), 5u);
  EXPECT_EQ(ep.query.size(), 75u);
  std::set<int> distinct(ep.classes.begin(), ep.classes.end());
  EXPECT_EQ(distinct.size(), 5u);
}

TEST(SampleEpisode, SupportQueryDisjointAndLabelsConsistent) {
  const auto pool = make_pool(3, 3, 20);
  std::mt19937_64 rng(2);
  for (int e = 0; e < 50; ++e) {
    const auto ep = sample_episode(pool, EpisodeSpec{4, 2, 5, EpisodeMode::standard, 1}, rng);
    std::set<std::size_t> s(ep.support.begin(), ep.support.end());
    for (auto q : ep.query) EXPECT_FALSE(s.count(q));
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
      EXPECT_EQ(pool.fine[ep.support[i]], ep.classes[static_cast<std::size_t>(ep.support_label[i])]);
    }
    for (std::size_t i = 0; i < ep.query.size(); ++i) {
      EXPECT_EQ(pool.fine[ep.query[i]], ep.classes[static_cast<std::size_t>(ep.query_label[i])]);
    }
  }
}

TEST(SampleEpisode, AllWayUsesEveryFineClass) {
  const auto pool = make_pool(2, 2, 20);
  std::mt19937_64 rng(3);
  const auto ep = sample_episode(pool, EpisodeSpec{99, 1, 15, EpisodeMode::all_way, 1}, rng);
  EXPECT_EQ(ep.classes.size(), 4u);
}

TEST(SampleEpisode, IntraClassStaysInOneCoarseClass) {
  const auto pool = make_pool(4, 3, 20);
  std::mt19937_64 rng(4);
  for (int e = 0; e < 20; ++e) {
    const auto ep = sample_episode(pool, EpisodeSpec{5, 1, 15, EpisodeMode::intra_class, 1}, rng);
    ASSERT_EQ(ep.classes.size(), 3u);
    EXPECT_EQ(ep.classes[0] / 3, ep.classes[2] / 3);
  }
}

TEST(SampleEpisode, InfeasibleNamesClass) {
  auto pool = make_pool(2, 2, 20);
  pool.fine.resize(70);
  pool.coarse.resize(70);  // fine class 3 keeps only 10 samples
  std::mt19937_64 rng(5);
  try {
    sample_episode(pool, EpisodeSpec{4, 1, 15, EpisodeMode::all_way, 1}, rng);
    FAIL();
  } catch (const EpisodeInfeasible& e) {
    EXPECT_NE(std::string(e.what()).find("class 3"), std::string::npos);
  }
  EXPECT_THROW(sample_episode(pool, EpisodeSpec{5, 1, 1, EpisodeMode::standard, 1}, rng), EpisodeInfeasible);
}

TEST(SampleEpisode, ReproduciblePerSeed) {
  const auto pool = make_pool(3, 3, 20);
  std::mt19937_64 a(6), b(6);
  const EpisodeSpec spec{5, 1, 15, EpisodeMode::standard, 1};
  EXPECT_EQ(sample_episode(pool, spec, a).query, sample_episode(pool, spec, b).query);
}

TEST(Knn, QueryEqualToSupport) {
  Matrix S(3, 2);
  S << 0.1, 0.0, 0.0, 0.2, -0.3, 0.0;
  const std::vector<int> labels{2, 0, 1};
  const auto pred = knn_classify(S, labels, S, Metric::poincare, 1, Curvature(1.0));
  EXPECT_EQ(pred, labels);
}

TEST(Knn, TiesGoToLowerIndexAndSmallerLabel) {
  Matrix d(1, 4);
  d << 1.0, 1.0, 2.0, 2.0;
  EXPECT_EQ(knn_from_distances(d, std::vector<int>{3, 1, 0, 0}, 1)[0], 3);
  // Two votes each for labels 1 and 0 → the smaller label.
  EXPECT_EQ(knn_from_distances(d, std::vector<int>{1, 0, 1, 0}, 4)[0], 0);
}

TEST(Knn, KnnBeyondSupportIsContractError) {
  EXPECT_THROW(knn_from_distances(Matrix::Ones(1, 2), std::vector<int>{0, 1}, 3), ContractError);
  EXPECT_THROW(knn_classify(Matrix(0, 2), std::vector<int>{}, Matrix::Ones(1, 2), Metric::cosine, 1, Curvature(1.0)),
               ContractError);
}

// Random directions at radii uniform in (0, 0.9) of the unit ball.
Matrix in_ball(Matrix X, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> r(0.0, 0.9);
  for (Eigen::Index i = 0; i < X.rows(); ++i) X.row(i) *= r(rng) / X.row(i).norm();
  return X;
}

TEST(Knn, MatchesBruteForce) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix S = in_ball(test::random_matrix(rng, 6, 3), rng);
    const Matrix Q = in_ball(test::random_matrix(rng, 4, 3), rng);
    const std::vector<int> labels{0, 1, 2, 0, 1, 2};
    const int k = 1 + trial % 3;
    const auto pred = knn_classify(S, labels, Q, Metric::poincare, k, Curvature(1.0));
    for (int q = 0; q < 4; ++q) {
      std::vector<std::pair<double, int>> d;
      for (int s = 0; s < 6; ++s) {
        const double num = (Q.row(q) - S.row(s)).squaredNorm();
        const double den = (1 - Q.row(q).squaredNorm()) * (1 - S.row(s).squaredNorm());
        d.emplace_back(std::acosh(1 + 2 * num / den), s);
      }
      std::stable_sort(d.begin(), d.end(), [](auto& a, auto& b) { return a.first < b.first; });
      int votes[3] = {0, 0, 0};
      for (int i = 0; i < k; ++i) ++votes[labels[static_cast<std::size_t>(d[static_cast<std::size_t>(i)].second)]];
      const int best = static_cast<int>(std::max_element(votes, votes + 3) - votes);
      EXPECT_EQ(pred[static_cast<std::size_t>(q)], best);
    }
  }
}

TEST(Knn, PoincareAndCosineAgreeOnCommonNormShell) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix S = test::random_matrix(rng, 10, 4), Q = test::random_matrix(rng, 20, 4);
    S.rowwise().normalize();
    Q.rowwise().normalize();
    S *= 0.6;
    Q *= 0.6;
    const std::vector<int> labels{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
    EXPECT_EQ(knn_classify(S, labels, Q, Metric::poincare, 3, Curvature(1.0)),
              knn_classify(S, labels, Q, Metric::cosine, 3, Curvature(1.0)));
  }
}

TEST(Aggregate, Examples) {
  const std::vector<double> perfect(50, 100.0);
  const auto p = aggregate(perfect);
  EXPECT_EQ(p.mean_accuracy, 100.0);
  EXPECT_EQ(p.ci95, 0.0);

  const std::vector<double> two{80.0, 90.0};
  const auto r = aggregate(two);
  EXPECT_NEAR(r.mean_accuracy, 85.0, 1e-12);
  EXPECT_NEAR(r.stddev, std::sqrt(50.0), 1e-12);
  EXPECT_NEAR(r.stddev, 7.0711, 1e-4);
  EXPECT_NEAR(r.ci95, 9.80, 5e-3);
  EXPECT_NEAR(r.ci95, 1.96 * std::sqrt(50.0) / std::sqrt(2.0), 1e-12);

  EXPECT_THROW(aggregate(std::vector<double>{1.0}), ContractError);
}

TEST(Aggregate, CiFormulaAtThousandEpisodes) {
  std::vector<double> acc(1000);
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = i % 2 ? 60.0 : 40.0;
  const auto r = aggregate(acc);
  // Sample std of ±10 around 50 with n = 1000 is 10·√(1000/999).
  EXPECT_NEAR(r.stddev, 10.0 * std::sqrt(1000.0 / 999.0), 1e-9);
  EXPECT_NEAR(r.ci95, 0.62, 5e-3);
}

TEST(Aggregate, PermutationInvariant) {
  std::mt19937_64 rng(9);
  std::vector<double> acc(333);
  std::uniform_real_distribution<double> u(0, 100);
  for (auto& a : acc) a = u(rng);
  const auto base = aggregate(acc);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(acc.begin(), acc.end(), rng);
    const auto r = aggregate(acc);
    EXPECT_EQ(r.mean_accuracy, base.mean_accuracy);
    EXPECT_EQ(r.ci95, base.ci95);
  }
}

TEST(Retrieval, HandPlacedAveragePrecision) {
  Matrix d(1, 5);
  d << 0.1, 0.2, 0.3, 0.4, 0.5;
  const std::vector<int> gallery{7, 1, 7, 2, 3};
  const std::vector<int> query{7};
  const std::vector<int> ks{1, 2, 10};
  const auto r = retrieval_from_distances(d, gallery, query, ks);
  EXPECT_NEAR(r.map, (1.0 / 1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(r.map, 0.8333, 1e-4);
  EXPECT_EQ(r.recall.at(1), 1.0);
  EXPECT_EQ(r.recall.at(10), 1.0);
}

TEST(Retrieval, DuplicatesGivePerfectScores) {
  std::mt19937_64 rng(10);
  const Matrix G = test::random_matrix(rng, 8, 3, 0.2);
  std::vector<int> labels(8);
  std::iota(labels.begin(), labels.end(), 0);
  const std::vector<int> ks{1};
  const auto r = retrieval_metrics(G, labels, G, labels, Metric::poincare, ks, Curvature(1.0));
  EXPECT_EQ(r.recall.at(1), 1.0);
  EXPECT_EQ(r.map, 1.0);
}

TEST(Retrieval, SelfExclusionAndMissingRelevant) {
  Matrix d(2, 3);
  d << 0.0, 0.5, 0.2, 0.3, 0.0, 0.1;
  const std::vector<int> gallery{4, 4, 9};
  const std::vector<std::size_t> self{0, 1};
  const std::vector<int> query{4, 5};
  const std::vector<int> ks{1};
  const auto r = retrieval_from_distances(d, gallery, query, ks, std::span<const std::size_t>(self));
  // Query 0 ranks gallery 2 then 1; its only relevant item is at rank 2.
  // Query 1 (label 5) has no relevant item and is skipped in mAP.
  EXPECT_NEAR(r.map, 0.5, 1e-15);
  EXPECT_EQ(r.recall.at(1), 0.0);
}

TEST(Retrieval, EmptyGallery) {
  const std::vector<int> ks{1};
  EXPECT_THROW(retrieval_metrics(Matrix(0, 2), std::vector<int>{}, Matrix::Ones(1, 2), std::vector<int>{0},
                                 Metric::cosine, ks, Curvature(1.0)),
               ContractError);
}

TEST(RunEpisodes, SeparatedClustersAreSolved) {
  const auto pool = make_pool(2, 3, 20);
  std::mt19937_64 rng(11);
  Matrix E(static_cast<Eigen::Index>(pool.fine.size()), 6);
  for (Eigen::Index i = 0; i < E.rows(); ++i) {
    Eigen::RowVectorXd centre = Eigen::RowVectorXd::Zero(6);
    centre(pool.fine[static_cast<std::size_t>(i)]) = 0.5;
    E.row(i) = centre + test::random_vector(rng, 6, 1e-3).transpose();
  }
  const Matrix D = pairwise_distances(E, E, Metric::poincare, Curvature(1.0));
  const auto rep = run_episodes(D, pool, EpisodeSpec{5, 1, 15, EpisodeMode::standard, 200}, 1, 3);
  EXPECT_EQ(rep.mean_accuracy, 100.0);
  EXPECT_EQ(rep.ci95, 0.0);
  const auto again = run_episodes(D, pool, EpisodeSpec{5, 1, 15, EpisodeMode::standard, 200}, 1, 3);
  EXPECT_EQ(again.accuracies, rep.accuracies);
}
