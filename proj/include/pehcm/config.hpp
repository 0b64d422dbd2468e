#pragma once

// Run configuration: line-oriented `key = value` text, overridable key by key
// (last writer wins). Keys whose value is `auto` are resolved from others.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pehcm/data.hpp"
#include "pehcm/errors.hpp"
#include "pehcm/eval.hpp"
#include "pehcm/io.hpp"
#include "pehcm/network.hpp"

namespace pehcm {

struct RunConfig {
  // data
  std::string train_file;  // empty → synthetic
  std::string eval_file;
  SyntheticSpec synthetic;
  double aug_sigma = -1.0;  // < 0 → spread_instance
  double aug_scale_min = 0.8;
  double aug_scale_max = 1.2;

  // model
  std::vector<int> encoder_dims{128, 128};
  std::vector<int> projector_dims{128, 32};
  double curvature = 0.001;
  Space space = Space::hyperbolic;

  // loss
  bool hcm = true;
  bool ahcd = true;
  double alpha = 800.0;
  double beta = 0.999;

  // optimisation
  int batch_size = 64;
  int epochs = 60;
  double lr = 1e-3;
  std::set<int> lr_decay_epochs;  // empty + auto flag → 0.6·E, 0.8·E
  bool lr_decay_auto = true;
  std::set<int> reinit_epochs;
  bool reinit_auto = true;
  double weight_decay = 0.0;
  double grad_clip = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // pseudo-labels
  int memory = 256;
  int k_clusters = 0;  // 0 → 2 × fines_per_coarse (synthetic) or 8
  int recluster_every = 0;  // optimizer steps; 0 → every epoch start
  int kmeans_restarts = 10;

  // evaluation
  EpisodeSpec episodes;
  int k_nn = 1;
  std::string metric = "auto";  // auto | poincare | cosine

  std::uint64_t seed = 0;

  /// Decay/reinit epochs scaled from a 200-epoch schedule at {120, 160}.
  static std::set<int> scaled_schedule(int epochs) {
    if (epochs <= 0) return {};
    return {static_cast<int>(std::lround(0.6 * epochs)), static_cast<int>(std::lround(0.8 * epochs))};
  }
  std::set<int> resolved_lr_decay() const { return lr_decay_auto ? scaled_schedule(epochs) : lr_decay_epochs; }
  std::set<int> resolved_reinit() const { return reinit_auto ? scaled_schedule(epochs) : reinit_epochs; }
  double resolved_aug_sigma() const { return aug_sigma < 0.0 ? synthetic.spread_instance : aug_sigma; }
  int resolved_k_clusters() const {
    if (k_clusters > 0) return k_clusters;
    return train_file.empty() ? 2 * synthetic.fines_per_coarse : 8;
  }
  Metric resolved_metric(Space model_space) const {
    if (metric == "poincare") return Metric::poincare;
    if (metric == "cosine") return Metric::cosine;
    return model_space == Space::hyperbolic ? Metric::poincare : Metric::cosine;
  }

  MlpSpec mlp_spec(int input_dim) const {
    MlpSpec s;
    s.layer_dims.push_back(input_dim);
    for (int d : encoder_dims) s.layer_dims.push_back(d);
    for (int d : projector_dims) s.layer_dims.push_back(d);
    s.encoder_layers = static_cast<int>(encoder_dims.size());
    return s;
  }

  void validate() const {
    if (train_file.empty()) synthetic.validate();
    if (!(curvature > 0.0)) throw ConfigError("curvature must be positive");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("beta must lie in (0, 1)");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (memory < 1) throw ConfigError("memory must be positive");
    if (k_clusters < 0) throw ConfigError("k_clusters must be non-negative");
    if (recluster_every < 0) throw ConfigError("recluster_every must be non-negative");
    if (kmeans_restarts < 1) throw ConfigError("kmeans_restarts must be positive");
    if (projector_dims.empty()) throw ConfigError("projector_dims must name at least one layer");
    if (k_nn < 1) throw ConfigError("k_nn must be positive");
    if (metric != "auto" && metric != "poincare" && metric != "cosine") throw ConfigError("unknown metric " + metric);
    if (!(aug_scale_min > 0.0 && aug_scale_max >= aug_scale_min)) throw ConfigError("bad augmentation scale range");
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

inline bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("bad value for " + key + ": '" + v + "' (expected on/off)");
}

template <typename Container>
Container parse_int_list(const std::string& key, const std::string& v) {
  Container out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(out.end(), parse_number<int>(key, trim(item)));
  return out;
}

template <typename Container>
std::string join_ints(const Container& c) {
  if (c.empty()) return "none";
  std::string out;
  for (int x : c) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

}  // namespace detail

/// Applies one `key = value` assignment.
inline void apply_setting(RunConfig& c, const std::string& key_in, const std::string& value_in) {
  using detail::parse_number;
  using detail::parse_switch;
  const std::string key = detail::trim(key_in);
  const std::string v = detail::trim(value_in);
  if (key == "train_file") c.train_file = v;
  else if (key == "eval_file") c.eval_file = v;
  else if (key == "synthetic.n_coarse") c.synthetic.n_coarse = parse_number<int>(key, v);
  else if (key == "synthetic.fines_per_coarse") c.synthetic.fines_per_coarse = parse_number<int>(key, v);
  else if (key == "synthetic.instances_per_fine") c.synthetic.instances_per_fine = parse_number<int>(key, v);
  else if (key == "synthetic.eval_instances_per_fine") c.synthetic.eval_instances_per_fine = parse_number<int>(key, v);
  else if (key == "synthetic.dim") c.synthetic.dim = parse_number<int>(key, v);
  else if (key == "synthetic.spread_coarse") c.synthetic.spread_coarse = parse_number<double>(key, v);
  else if (key == "synthetic.spread_fine") c.synthetic.spread_fine = parse_number<double>(key, v);
  else if (key == "synthetic.spread_instance") c.synthetic.spread_instance = parse_number<double>(key, v);
  else if (key == "synthetic.seed") c.synthetic.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "aug_sigma") c.aug_sigma = v == "auto" ? -1.0 : parse_number<double>(key, v);
  else if (key == "aug_scale_min") c.aug_scale_min = parse_number<double>(key, v);
  else if (key == "aug_scale_max") c.aug_scale_max = parse_number<double>(key, v);
  else if (key == "encoder_dims") c.encoder_dims = detail::parse_int_list<std::vector<int>>(key, v);
  else if (key == "projector_dims") c.projector_dims = detail::parse_int_list<std::vector<int>>(key, v);
  else if (key == "curvature") c.curvature = parse_number<double>(key, v);
  else if (key == "space") {
    if (v == "euclidean") c.space = Space::euclidean;
    else if (v == "hyperbolic") c.space = Space::hyperbolic;
    else throw ConfigError("bad value for space: '" + v + "'");
  } else if (key == "hcm") c.hcm = parse_switch(key, v);
  else if (key == "ahcd") c.ahcd = parse_switch(key, v);
  else if (key == "alpha") c.alpha = parse_number<double>(key, v);
  else if (key == "beta") c.beta = parse_number<double>(key, v);
  else if (key == "batch_size") c.batch_size = parse_number<int>(key, v);
  else if (key == "epochs") c.epochs = parse_number<int>(key, v);
  else if (key == "lr") c.lr = parse_number<double>(key, v);
  else if (key == "lr_decay_epochs") {
    c.lr_decay_auto = v == "auto";
    if (!c.lr_decay_auto) c.lr_decay_epochs = detail::parse_int_list<std::set<int>>(key, v);
  } else if (key == "reinit_epochs") {
    c.reinit_auto = v == "auto";
    if (!c.reinit_auto) c.reinit_epochs = detail::parse_int_list<std::set<int>>(key, v);
  } else if (key == "weight_decay") c.weight_decay = parse_number<double>(key, v);
  else if (key == "grad_clip") c.grad_clip = parse_number<double>(key, v);
  else if (key == "adam_beta1") c.adam_beta1 = parse_number<double>(key, v);
  else if (key == "adam_beta2") c.adam_beta2 = parse_number<double>(key, v);
  else if (key == "adam_eps") c.adam_eps = parse_number<double>(key, v);
  else if (key == "memory") c.memory = parse_number<int>(key, v);
  else if (key == "k_clusters") c.k_clusters = v == "auto" ? 0 : parse_number<int>(key, v);
  else if (key == "recluster_every") c.recluster_every = parse_number<int>(key, v);
  else if (key == "kmeans_restarts") c.kmeans_restarts = parse_number<int>(key, v);
  else if (key == "eval.n_way") c.episodes.n_way = parse_number<int>(key, v);
  else if (key == "eval.k_shot") c.episodes.k_shot = parse_number<int>(key, v);
  else if (key == "eval.n_query") c.episodes.n_query = parse_number<int>(key, v);
  else if (key == "eval.n_episodes") c.episodes.n_episodes = parse_number<int>(key, v);
  else if (key == "eval.mode") {
    if (v == "standard") c.episodes.mode = EpisodeMode::standard;
    else if (v == "all_way") c.episodes.mode = EpisodeMode::all_way;
    else if (v == "intra_class") c.episodes.mode = EpisodeMode::intra_class;
    else throw ConfigError("bad value for eval.mode: '" + v + "'");
  } else if (key == "eval.k_nn") c.k_nn = parse_number<int>(key, v);
  else if (key == "eval.metric") c.metric = v;
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

/// Applies `key=value` (the CLI override form).
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  apply_setting(c, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line is not 'key = value'", lineno);
    try {
      apply_setting(c, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
}

/// Fully resolved configuration as `key = value` text; parses back to an equal config.
inline std::string to_config_text(const RunConfig& c) {
  std::ostringstream o;
  auto d = [](double x) { return io::format_double(x); };
  o << "# resolved run configuration\n";
  o << "train_file = " << c.train_file << "\n";
  o << "eval_file = " << c.eval_file << "\n";
  o << "synthetic.n_coarse = " << c.synthetic.n_coarse << "\n";
  o << "synthetic.fines_per_coarse = " << c.synthetic.fines_per_coarse << "\n";
  o << "synthetic.instances_per_fine = " << c.synthetic.instances_per_fine << "\n";
  o << "synthetic.eval_instances_per_fine = " << c.synthetic.eval_instances_per_fine << "\n";
  o << "synthetic.dim = " << c.synthetic.dim << "\n";
  o << "synthetic.spread_coarse = " << d(c.synthetic.spread_coarse) << "\n";
  o << "synthetic.spread_fine = " << d(c.synthetic.spread_fine) << "\n";
  o << "synthetic.spread_instance = " << d(c.synthetic.spread_instance) << "\n";
  o << "synthetic.seed = " << c.synthetic.seed << "\n";
  o << "aug_sigma = " << d(c.resolved_aug_sigma()) << "\n";
  o << "aug_scale_min = " << d(c.aug_scale_min) << "\n";
  o << "aug_scale_max = " << d(c.aug_scale_max) << "\n";
  o << "encoder_dims = " << detail::join_ints(c.encoder_dims) << "\n";
  o << "projector_dims = " << detail::join_ints(c.projector_dims) << "\n";
  o << "curvature = " << d(c.curvature) << "\n";
  o << "space = " << to_string(c.space) << "\n";
  o << "hcm = " << (c.hcm ? "on" : "off") << "\n";
  o << "ahcd = " << (c.ahcd ? "on" : "off") << "\n";
  o << "alpha = " << d(c.alpha) << "\n";
  o << "beta = " << d(c.beta) << "\n";
  o << "batch_size = " << c.batch_size << "\n";
  o << "epochs = " << c.epochs << "\n";
  o << "lr = " << d(c.lr) << "\n";
  o << "lr_decay_epochs = " << detail::join_ints(c.resolved_lr_decay()) << "\n";
  o << "reinit_epochs = " << detail::join_ints(c.resolved_reinit()) << "\n";
  o << "weight_decay = " << d(c.weight_decay) << "\n";
  o << "grad_clip = " << d(c.grad_clip) << "\n";
  o << "adam_beta1 = " << d(c.adam_beta1) << "\n";
  o << "adam_beta2 = " << d(c.adam_beta2) << "\n";
  o << "adam_eps = " << d(c.adam_eps) << "\n";
  o << "memory = " << c.memory << "\n";
  o << "k_clusters = " << c.resolved_k_clusters() << "\n";
  o << "recluster_every = " << c.recluster_every << "\n";
  o << "kmeans_restarts = " << c.kmeans_restarts << "\n";
  o << "eval.n_way = " << c.episodes.n_way << "\n";
  o << "eval.k_shot = " << c.episodes.k_shot << "\n";
  o << "eval.n_query = " << c.episodes.n_query << "\n";
  o << "eval.n_episodes = " << c.episodes.n_episodes << "\n";
  o << "eval.mode = " << to_string(c.episodes.mode) << "\n";
  o << "eval.k_nn = " << c.k_nn << "\n";
  o << "eval.metric = " << c.metric << "\n";
  o << "seed = " << c.seed << "\n";
  return o.str();
}

}  // namespace pehcm
