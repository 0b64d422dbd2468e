#pragma once

// Episodic few-shot evaluation and retrieval metrics over learned embeddings.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pehcm/errors.hpp"
#include "pehcm/geometry.hpp"

namespace pehcm {

using Matrix = Eigen::MatrixXd;

enum class EpisodeMode { standard, all_way, intra_class };
enum class Metric { poincare, cosine };

inline const char* to_string(EpisodeMode m) {
  switch (m) {
    case EpisodeMode::standard: return "standard";
    case EpisodeMode::all_way: return "all_way";
    case EpisodeMode::intra_class: return "intra_class";
  }
  return "?";
}
inline const char* to_string(Metric m) { return m == Metric::poincare ? "poincare" : "cosine"; }

struct EpisodeSpec {
  int n_way = 5;
  int k_shot = 1;
  int n_query = 15;
  EpisodeMode mode = EpisodeMode::standard;
  int n_episodes = 1000;
};

/// Fine/coarse labels of an evaluation pool, one entry per embedded sample.
struct PoolLabels {
  std::vector<int> fine;
  std::vector<int> coarse;
};

struct Episode {
  std::vector<int> classes;  // fine ids; local label = position
  std::vector<std::size_t> support;
  std::vector<int> support_label;
  std::vector<std::size_t> query;
  std::vector<int> query_label;
};

inline Episode sample_episode(const PoolLabels& pool, const EpisodeSpec& spec, std::mt19937_64& rng) {
  if (pool.fine.size() != pool.coarse.size()) throw ContractError("sample_episode: label arrays differ in length");
  if (spec.k_shot < 1 || spec.n_query < 1) throw ContractError("sample_episode: k_shot and n_query must be positive");
  std::map<int, std::vector<std::size_t>> members;
  std::map<int, std::set<int>> fines_of_coarse;
  for (std::size_t i = 0; i < pool.fine.size(); ++i) {
    members[pool.fine[i]].push_back(i);
    fines_of_coarse[pool.coarse[i]].insert(pool.fine[i]);
  }
  if (members.empty()) throw EpisodeInfeasible("sample_episode: empty pool");

  Episode ep;
  switch (spec.mode) {
    case EpisodeMode::standard: {
      if (spec.n_way < 1 || static_cast<std::size_t>(spec.n_way) > members.size()) {
        throw EpisodeInfeasible("sample_episode: n_way " + std::to_string(spec.n_way) + " exceeds the " +
                                std::to_string(members.size()) + " available fine classes");
      }
      std::vector<int> all;
      for (const auto& [f, _] : members) all.push_back(f);
      std::shuffle(all.begin(), all.end(), rng);
      ep.classes.assign(all.begin(), all.begin() + spec.n_way);
      break;
    }
    case EpisodeMode::all_way:
      for (const auto& [f, _] : members) ep.classes.push_back(f);
      break;
    case EpisodeMode::intra_class: {
      std::vector<int> coarse_ids;
      for (const auto& [c, _] : fines_of_coarse) coarse_ids.push_back(c);
      std::uniform_int_distribution<std::size_t> pick(0, coarse_ids.size() - 1);
      const auto& fines = fines_of_coarse[coarse_ids[pick(rng)]];
      ep.classes.assign(fines.begin(), fines.end());
      break;
    }
  }
  const std::size_t need = static_cast<std::size_t>(spec.k_shot + spec.n_query);
  for (std::size_t local = 0; local < ep.classes.size(); ++local) {
    auto idx = members[ep.classes[local]];
    if (idx.size() < need) {
      throw EpisodeInfeasible("sample_episode: fine class " + std::to_string(ep.classes[local]) + " has " +
                              std::to_string(idx.size()) + " samples, needs " + std::to_string(need));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < need; ++j) {
      if (j < static_cast<std::size_t>(spec.k_shot)) {
        ep.support.push_back(idx[j]);
        ep.support_label.push_back(static_cast<int>(local));
      } else {
        ep.query.push_back(idx[j]);
        ep.query_label.push_back(static_cast<int>(local));
      }
    }
  }
  return ep;
}

/// Pairwise distances between rows of A and rows of B. For the Poincaré
/// metric the rows must already be points of the ball of curvature `c`.
inline Matrix pairwise_distances(const Matrix& A, const Matrix& B, Metric metric, Curvature c) {
  Matrix D(A.rows(), B.rows());
  if (metric == Metric::cosine) {
    const Eigen::VectorXd an = A.rowwise().norm();
    const Eigen::VectorXd bn = B.rowwise().norm();
    if ((an.array() <= 0.0).any() || (bn.array() <= 0.0).any()) throw InvalidInput("cosine metric: zero-norm embedding");
    D = (1.0 - ((an.cwiseInverse().asDiagonal() * A) * (bn.cwiseInverse().asDiagonal() * B).transpose()).array())
            .cwiseMax(0.0)
            .matrix();
    return D;
  }
  std::vector<PoincarePoint> bp;
  bp.reserve(static_cast<std::size_t>(B.rows()));
  for (Eigen::Index j = 0; j < B.rows(); ++j) bp.emplace_back(B.row(j).transpose(), c);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const PoincarePoint a(A.row(i).transpose(), c);
    for (Eigen::Index j = 0; j < B.rows(); ++j) D(i, j) = poincare_distance(a, bp[static_cast<std::size_t>(j)]);
  }
  return D;
}

/// Majority vote over the k_nn nearest supports given a query × support
/// distance matrix. Distance ties go to the lower support index, vote ties to
/// the smaller class label.
inline std::vector<int> knn_from_distances(const Matrix& dist, std::span<const int> support_labels, int k_nn) {
  const auto n_support = static_cast<std::size_t>(dist.cols());
  if (n_support == 0) throw ContractError("knn_classify: empty support set");
  if (support_labels.size() != n_support) throw ContractError("knn_classify: support label count mismatch");
  if (k_nn < 1 || static_cast<std::size_t>(k_nn) > n_support) {
    throw ContractError("knn_classify: k_nn " + std::to_string(k_nn) + " exceeds support size " +
                        std::to_string(n_support));
  }
  std::vector<int> out(static_cast<std::size_t>(dist.rows()));
  std::vector<std::size_t> order(n_support);
  for (Eigen::Index q = 0; q < dist.rows(); ++q) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dist(q, static_cast<Eigen::Index>(a)) < dist(q, static_cast<Eigen::Index>(b));
    });
    std::map<int, int> votes;
    for (int i = 0; i < k_nn; ++i) ++votes[support_labels[order[static_cast<std::size_t>(i)]]];
    int best = votes.begin()->first;
    int best_votes = -1;
    for (const auto& [label, count] : votes) {
      if (count > best_votes) {
        best = label;
        best_votes = count;
      }
    }
    out[static_cast<std::size_t>(q)] = best;
  }
  return out;
}

inline std::vector<int> knn_classify(const Matrix& support, std::span<const int> support_labels, const Matrix& query,
                                     Metric metric, int k_nn, Curvature c) {
  if (support.rows() == 0) throw ContractError("knn_classify: empty support set");
  return knn_from_distances(pairwise_distances(query, support, metric, c), support_labels, k_nn);
}

struct EvalReport {
  EpisodeSpec spec;
  Metric metric = Metric::poincare;
  double mean_accuracy = 0.0;  // percent
  double stddev = 0.0;
  double ci95 = 0.0;
  std::vector<double> accuracies;
  std::map<int, double> recall;  // percent
  std::optional<double> map;     // percent
};

/// Mean, sample standard deviation and 1.96·std/√n of per-episode accuracies.
inline EvalReport aggregate(std::span<const double> accuracies) {
  if (accuracies.size() < 2) throw ContractError("aggregate: need at least two episodes");
  EvalReport r;
  r.accuracies.assign(accuracies.begin(), accuracies.end());
  const double n = static_cast<double>(accuracies.size());
  // Sorted summation makes the result independent of input order.
  std::vector<double> sorted(accuracies.begin(), accuracies.end());
  std::sort(sorted.begin(), sorted.end());
  r.mean_accuracy = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : sorted) ss += (a - r.mean_accuracy) * (a - r.mean_accuracy);
  r.stddev = std::sqrt(ss / (n - 1.0));
  r.ci95 = 1.96 * r.stddev / std::sqrt(n);
  return r;
}

/// Runs `spec.n_episodes` episodes against a precomputed pool distance matrix.
inline EvalReport run_episodes(const Matrix& pool_dist, const PoolLabels& pool, const EpisodeSpec& spec, int k_nn,
                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> acc;
  acc.reserve(static_cast<std::size_t>(spec.n_episodes));
  EpisodeSpec effective = spec;
  for (int e = 0; e < spec.n_episodes; ++e) {
    const Episode ep = sample_episode(pool, spec, rng);
    effective.n_way = static_cast<int>(ep.classes.size());
    Matrix d(static_cast<Eigen::Index>(ep.query.size()), static_cast<Eigen::Index>(ep.support.size()));
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
      for (std::size_t s = 0; s < ep.support.size(); ++s) {
        d(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(s)) =
            pool_dist(static_cast<Eigen::Index>(ep.query[q]), static_cast<Eigen::Index>(ep.support[s]));
      }
    }
    const auto pred = knn_from_distances(d, ep.support_label, k_nn);
    std::size_t correct = 0;
    for (std::size_t q = 0; q < pred.size(); ++q) correct += pred[q] == ep.query_label[q];
    acc.push_back(100.0 * static_cast<double>(correct) / static_cast<double>(pred.size()));
  }
  EvalReport r = aggregate(acc);
  r.spec = effective;
  return r;
}

struct RetrievalResult {
  std::map<int, double> recall;  // fraction of queries with a hit in the top k
  double map = 0.0;              // mean average precision over queries with ≥ 1 relevant item
};

/// Recall@k and mAP from a query × gallery distance matrix. `self_index[q]`,
/// when given, names the gallery row that is the query itself and is skipped.
inline RetrievalResult retrieval_from_distances(const Matrix& dist, std::span<const int> gallery_labels,
                                                std::span<const int> query_labels, std::span<const int> ks,
                                                std::optional<std::span<const std::size_t>> self_index = std::nullopt) {
  if (dist.cols() == 0) throw ContractError("retrieval_metrics: empty gallery");
  if (static_cast<std::size_t>(dist.cols()) != gallery_labels.size() ||
      static_cast<std::size_t>(dist.rows()) != query_labels.size()) {
    throw ContractError("retrieval_metrics: label counts do not match distances");
  }
  RetrievalResult res;
  std::vector<std::size_t> hits(ks.size(), 0);
  double ap_sum = 0.0;
  std::size_t ap_count = 0;
  std::vector<std::size_t> order;
  for (Eigen::Index q = 0; q < dist.rows(); ++q) {
    order.clear();
    for (Eigen::Index g = 0; g < dist.cols(); ++g) {
      if (self_index && (*self_index)[static_cast<std::size_t>(q)] == static_cast<std::size_t>(g)) continue;
      order.push_back(static_cast<std::size_t>(g));
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dist(q, static_cast<Eigen::Index>(a)) < dist(q, static_cast<Eigen::Index>(b));
    });
    const int label = query_labels[static_cast<std::size_t>(q)];
    std::size_t first_hit = order.size();
    std::size_t relevant = 0;
    double precision_sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery_labels[order[r]] == label) {
        ++relevant;
        precision_sum += static_cast<double>(relevant) / static_cast<double>(r + 1);
        if (first_hit == order.size()) first_hit = r;
      }
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (relevant > 0 && first_hit < static_cast<std::size_t>(ks[i])) ++hits[i];
    }
    if (relevant > 0) {
      ap_sum += precision_sum / static_cast<double>(relevant);
      ++ap_count;
    }
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    res.recall[ks[i]] = static_cast<double>(hits[i]) / static_cast<double>(dist.rows());
  }
  res.map = ap_count ? ap_sum / static_cast<double>(ap_count) : 0.0;
  return res;
}

inline RetrievalResult retrieval_metrics(const Matrix& gallery, std::span<const int> gallery_labels,
                                         const Matrix& queries, std::span<const int> query_labels, Metric metric,
                                         std::span<const int> ks, Curvature c,
                                         std::optional<std::span<const std::size_t>> self_index = std::nullopt) {
  if (gallery.rows() == 0) throw ContractError("retrieval_metrics: empty gallery");
  return retrieval_from_distances(pairwise_distances(queries, gallery, metric, c), gallery_labels, query_labels, ks,
                                  self_index);
}

}  // namespace pehcm
