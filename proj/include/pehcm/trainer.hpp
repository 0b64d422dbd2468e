#pragma once

// Training orchestration: per epoch recluster the memory, then per batch
// augment → forward both views → L_cls + α·L_hcm → backward → Adam → push
// K-view features → update the target ladder.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pehcm/checkpoint.hpp"
#include "pehcm/config.hpp"
#include "pehcm/data.hpp"
#include "pehcm/eval.hpp"
#include "pehcm/hcm_loss.hpp"
#include "pehcm/io.hpp"
#include "pehcm/network.hpp"
#include "pehcm/pseudo_labels.hpp"

namespace pehcm {

/// Independent RNG stream for (seed, tag, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t parts[2];
  seq.generate(parts, parts + 2);
  return (static_cast<std::uint64_t>(parts[0]) << 32) | parts[1];
}

enum StreamTag : std::uint32_t { kInitStream = 1, kBatchStream, kAugmentStream, kClusterStream, kEvalStream };

struct MetricsRow {
  int epoch = 0;
  double l_cls = 0.0;
  double l_hcm = 0.0;
  double total = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double train_coarse_acc = 0.0;  // percent
  double wall_time = 0.0;         // seconds since training start
};

inline constexpr std::string_view kMetricsHeader =
    "# pehcm-metrics v1\nepoch,l_cls,l_hcm,total,d1,d2,train_coarse_acc\n";

/// Deterministic per-epoch metrics; wall time goes to a separate timing file.
inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream o;
  o << kMetricsHeader;
  for (const auto& r : rows) {
    o << r.epoch << ',' << io::format_double(r.l_cls) << ',' << io::format_double(r.l_hcm) << ','
      << io::format_double(r.total) << ',' << io::format_double(r.d1) << ',' << io::format_double(r.d2) << ','
      << io::format_double(r.train_coarse_acc) << '\n';
  }
  return o.str();
}

inline std::string timing_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream o;
  o << "epoch,wall_time\n";
  for (const auto& r : rows) o << r.epoch << ',' << io::format_double(r.wall_time) << '\n';
  return o.str();
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<MetricsRow> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#' || line.starts_with("epoch")) continue;
    const auto f = detail::split_commas(line);
    if (f.size() != 7) throw ParseError("metrics row must have 7 columns", lineno);
    MetricsRow r;
    r.epoch = detail::parse_field<int>(f[0], lineno, "epoch");
    r.l_cls = detail::parse_field<double>(f[1], lineno, "l_cls");
    r.l_hcm = detail::parse_field<double>(f[2], lineno, "l_hcm");
    r.total = detail::parse_field<double>(f[3], lineno, "total");
    r.d1 = detail::parse_field<double>(f[4], lineno, "d1");
    r.d2 = detail::parse_field<double>(f[5], lineno, "d2");
    r.train_coarse_acc = detail::parse_field<double>(f[6], lineno, "train_coarse_acc");
    rows.push_back(r);
  }
  return rows;
}

struct Datasets {
  Dataset train;
  Dataset eval;
};

inline Datasets load_datasets(const RunConfig& cfg) {
  if (cfg.train_file.empty()) {
    auto syn = generate(cfg.synthetic);
    return {std::move(syn.train), std::move(syn.eval)};
  }
  Datasets d;
  d.train = ingest_features(cfg.train_file, 0);
  if (!cfg.eval_file.empty()) {
    d.eval = ingest_features(cfg.eval_file, static_cast<std::int64_t>(d.train.samples.size()), d.train.dim);
  }
  return d;
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
};

using EpochCallback = std::function<void(const MetricsRow&)>;

inline Checkpoint initial_checkpoint(const RunConfig& cfg, int input_dim, int num_classes) {
  std::mt19937_64 init_rng(derive_seed(cfg.seed, kInitStream));
  Checkpoint ck;
  ck.model = Model::init(cfg.mlp_spec(input_dim), cfg.space, num_classes, Curvature(cfg.curvature), init_rng);
  ck.adam = AdamState::for_model(ck.model);
  ck.targets.beta = cfg.beta;
  ck.seed = cfg.seed;
  return ck;
}

inline TrainResult train(const RunConfig& cfg, const Dataset& data, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.samples.empty()) throw ConfigError("training set is empty");
  const int num_classes = data.num_coarse();
  const auto n = data.samples.size();
  if (n < static_cast<std::size_t>(cfg.batch_size)) throw ConfigError("training set smaller than one batch");

  TrainResult out;
  out.checkpoint = initial_checkpoint(cfg, data.dim, num_classes);
  Model& model = out.checkpoint.model;
  AdamState& adam = out.checkpoint.adam;
  TargetDistances& targets = out.checkpoint.targets;

  const bool use_hcm = cfg.hcm && cfg.alpha > 0.0;
  const bool use_ahcd = use_hcm && cfg.ahcd;
  const auto decay = cfg.resolved_lr_decay();
  const auto reinit = cfg.resolved_reinit();
  const int k_clusters = cfg.resolved_k_clusters();
  const AugmentOptions aug{cfg.resolved_aug_sigma(), cfg.aug_scale_min, cfg.aug_scale_max};

  MemoryBank bank(num_classes, static_cast<std::size_t>(cfg.memory), cfg.projector_dims.back());
  ClusterModel clusters;
  clusters.k_clusters = k_clusters;
  clusters.centroids.resize(static_cast<std::size_t>(num_classes));

  std::mt19937_64 batch_rng(derive_seed(cfg.seed, kBatchStream));
  std::mt19937_64 aug_rng(derive_seed(cfg.seed, kAugmentStream));
  std::mt19937_64 head_rng(derive_seed(cfg.seed, kInitStream, 1));
  std::uint64_t step = 0;
  std::uint64_t recluster_round = 0;
  auto do_recluster = [&] {
    clusters = recluster(bank, k_clusters, derive_seed(cfg.seed, kClusterStream, recluster_round++),
                         cfg.kmeans_restarts);
  };

  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    AdamOptions opt{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay};
    for (int e : decay) {
      if (epoch >= e) opt.lr *= 0.1;
    }
    if (use_hcm && cfg.recluster_every == 0) do_recluster();

    double sum_cls = 0.0, sum_hcm = 0.0, sum_total = 0.0;
    std::size_t correct = 0, seen = 0, batches = 0;
    for (const auto& idx : epoch_batches(n, static_cast<std::size_t>(cfg.batch_size), batch_rng)) {
      if (use_hcm && cfg.recluster_every > 0 && step % static_cast<std::uint64_t>(cfg.recluster_every) == 0) {
        do_recluster();
      }
      const auto B = static_cast<Eigen::Index>(idx.size());
      Batch batch;
      batch.view_q.resize(B, data.dim);
      batch.view_k.resize(B, data.dim);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const Sample& s = data.samples[idx[i]];
        ViewPair vp = augment_pair(s, aug, aug_rng);
        batch.view_q.row(static_cast<Eigen::Index>(i)) = vp.view_q.transpose();
        batch.view_k.row(static_cast<Eigen::Index>(i)) = vp.view_k.transpose();
        batch.labels.push_back(vp.labels);
        batch.coarse.push_back(s.coarse);
      }
      Matrix projected_k;
      if (use_hcm) {
        // Pseudo-labels come from the K view, the branch that feeds the memory.
        projected_k = forward(batch.view_k, model).projector_out();
        const auto pseudo = assign_pseudo(projected_k, batch.coarse, clusters);
        for (std::size_t i = 0; i < pseudo.size(); ++i) batch.labels[i].fine_pseudo = pseudo[i];
      }

      LossOptions lopt{cfg.alpha, use_hcm, targets};
      Model grads = model.zeros_like();
      const LossResult r = composite_loss(model, batch, lopt, &grads);
      if (!std::isfinite(r.l_cls)) {
        throw NonFiniteLoss("classification loss (L_cls) became non-finite at epoch " + std::to_string(epoch));
      }
      if (!std::isfinite(r.l_hcm)) {
        throw NonFiniteLoss("hierarchical cosine margin loss (L_hcm) became non-finite at epoch " +
                            std::to_string(epoch));
      }
      clip_grad_norm(grads, cfg.grad_clip);
      adam_step(model, grads, adam, opt);
      if (model.space == Space::hyperbolic) model.mlr.reinit_degenerate(head_rng);
      ++step;

      if (use_hcm) {
        memory_push(bank, projected_k, batch.coarse);
        if (use_ahcd) {
          targets = ahcd_update(targets, batch_stratum_means(r.W, batch.labels, batch.labels), epoch, reinit);
        }
      }
      sum_cls += r.l_cls;
      sum_hcm += r.l_hcm;
      sum_total += r.total;
      for (Eigen::Index i = 0; i < B; ++i) {
        Eigen::Index arg = 0;
        r.logits_q.row(i).maxCoeff(&arg);
        correct += static_cast<int>(arg) == batch.coarse[static_cast<std::size_t>(i)];
      }
      seen += idx.size();
      ++batches;
    }
    MetricsRow row;
    row.epoch = epoch;
    const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
    row.l_cls = sum_cls / nb;
    row.l_hcm = sum_hcm / nb;
    row.total = sum_total / nb;
    row.d1 = targets.d1;
    row.d2 = targets.d2;
    row.train_coarse_acc = seen ? 100.0 * static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.metrics.push_back(row);
    out.checkpoint.epochs_completed = static_cast<std::uint32_t>(epoch + 1);
    if (on_epoch) on_epoch(row);
  }
  return out;
}

/// Projector outputs for every sample, one row each.
inline Matrix embed(const Model& model, const Dataset& data) {
  Matrix X(static_cast<Eigen::Index>(data.samples.size()), data.dim);
  for (std::size_t i = 0; i < data.samples.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = data.samples[i].features.transpose();
  return forward(X, model).projector_out();
}

/// Embeddings ready for `metric`: exp-mapped into the ball for Poincaré.
inline Matrix embed_for_metric(const Model& model, const Dataset& data, Metric metric) {
  Matrix E = embed(model, data);
  if (metric == Metric::poincare) {
    for (Eigen::Index i = 0; i < E.rows(); ++i) E.row(i) = exp_map(E.row(i).transpose(), model.curvature()).coords().transpose();
  }
  return E;
}

struct EvaluateOptions {
  EpisodeSpec episodes;
  Metric metric = Metric::poincare;
  int k_nn = 1;
  std::uint64_t seed = 0;
  std::vector<int> recall_ks;  // empty → no retrieval metrics
};

inline EvalReport evaluate(const Model& model, const Dataset& pool_data, const EvaluateOptions& opt) {
  if (!pool_data.has_fine()) {
    throw ContractError("evaluation needs fine labels; the evaluation file has none");
  }
  const Matrix E = embed_for_metric(model, pool_data, opt.metric);
  PoolLabels labels;
  for (const auto& s : pool_data.samples) {
    labels.fine.push_back(*s.fine_true);
    labels.coarse.push_back(s.coarse);
  }
  const Matrix D = pairwise_distances(E, E, opt.metric, model.curvature());
  EvalReport report = run_episodes(D, labels, opt.episodes, opt.k_nn, derive_seed(opt.seed, kEvalStream));
  report.metric = opt.metric;
  if (!opt.recall_ks.empty()) {
    std::vector<std::size_t> self(labels.fine.size());
    std::iota(self.begin(), self.end(), std::size_t{0});
    const auto rm = retrieval_from_distances(D, labels.fine, labels.fine, opt.recall_ks,
                                             std::span<const std::size_t>(self));
    for (const auto& [k, v] : rm.recall) report.recall[k] = 100.0 * v;
    report.map = 100.0 * rm.map;
  }
  return report;
}

}  // namespace pehcm
