// pehcm command-line driver.
//
//   pehcm gen-data        write the synthetic train/eval pools to files
//   pehcm train           train and write checkpoint, metrics and resolved config
//   pehcm eval            episodic few-shot evaluation (+ retrieval) → JSON report
//   pehcm gradcheck       finite-difference check of the composite loss
//   pehcm cluster-inspect per-class clustering summary of a checkpoint → JSON
//   pehcm plot            d1/d2 curves (SVG) and α-sweep tables (CSV)
//
// Exit code 0 on success; otherwise 1 with {"error": kind, "message": ...} on stderr.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pehcm/pehcm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> overrides;

  void add_to(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_file, "key = value config file");
    cmd->add_option("-s,--set", overrides, "override a config key (key=value), repeatable; last wins");
  }

  pehcm::RunConfig resolve() const {
    pehcm::RunConfig cfg;
    if (!config_file.empty()) pehcm::apply_config_text(cfg, pehcm::io::read_file(config_file));
    for (const auto& o : overrides) pehcm::apply_override(cfg, o);
    cfg.validate();
    return cfg;
  }
};

int threads_from_env() {
  const char* v = std::getenv("PEHCM_THREADS");
  if (!v || !*v) return 1;
  try {
    const int n = std::stoi(v);
    if (n < 1) throw pehcm::ConfigError("PEHCM_THREADS must be a positive integer");
    return n;
  } catch (const std::logic_error&) {
    throw pehcm::ConfigError(std::string("PEHCM_THREADS is not an integer: ") + v);
  }
}

json report_json(const pehcm::EvalReport& r) {
  json j;
  j["mode"] = pehcm::to_string(r.spec.mode);
  j["n_way"] = r.spec.n_way;
  j["k_shot"] = r.spec.k_shot;
  j["n_episodes"] = r.spec.n_episodes;
  j["mean_acc"] = r.mean_accuracy;
  j["ci95"] = r.ci95;
  j["metric"] = pehcm::to_string(r.metric);
  json recall = json::object();
  for (const auto& [k, v] : r.recall) recall[std::to_string(k)] = v;
  j["recall"] = recall;
  j["map"] = r.map ? json(*r.map) : json(nullptr);
  return j;
}

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    pehcm::io::write_file_atomic(path, j.dump(2) + "\n");
  }
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const ConfigArgs& args, const std::string& out_dir, const std::string& format) {
  const auto cfg = args.resolve();
  const auto data = pehcm::generate(cfg.synthetic);
  const bool binary = format == "binary";
  const std::string ext = binary ? ".bin" : ".csv";
  const auto write = [&](const pehcm::Dataset& ds, const std::string& name) {
    const std::string path = (fs::path(out_dir) / (name + ext)).string();
    binary ? pehcm::write_dataset_binary(ds, path) : pehcm::write_dataset_csv(ds, path);
    return path;
  };
  json j;
  j["train"] = write(data.train, "train");
  j["eval"] = write(data.eval, "eval");
  j["train_samples"] = data.train.samples.size();
  j["eval_samples"] = data.eval.samples.size();
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_train(const ConfigArgs& args, const std::string& out_dir, bool quiet) {
  const auto cfg = args.resolve();
  const auto data = pehcm::load_datasets(cfg);
  fs::create_directories(out_dir);
  pehcm::io::write_file_atomic((fs::path(out_dir) / "config.resolved.txt").string(), pehcm::to_config_text(cfg));
  const auto result = pehcm::train(cfg, data.train, [&](const pehcm::MetricsRow& r) {
    if (!quiet) {
      std::cerr << "epoch " << r.epoch << "  l_cls " << r.l_cls << "  l_hcm " << r.l_hcm << "  total " << r.total
                << "  d1 " << r.d1 << "  d2 " << r.d2 << "  acc " << r.train_coarse_acc << "%  " << r.wall_time
                << "s\n";
    }
  });
  pehcm::save_checkpoint(result.checkpoint, (fs::path(out_dir) / "checkpoint.bin").string());
  pehcm::io::write_file_atomic((fs::path(out_dir) / "metrics.csv").string(), pehcm::metrics_csv(result.metrics));
  pehcm::io::write_file_atomic((fs::path(out_dir) / "timing.csv").string(), pehcm::timing_csv(result.metrics));
  json j;
  j["checkpoint"] = (fs::path(out_dir) / "checkpoint.bin").string();
  j["epochs"] = result.metrics.size();
  if (!result.metrics.empty()) {
    j["final_d1"] = result.metrics.back().d1;
    j["final_d2"] = result.metrics.back().d2;
    j["final_train_coarse_acc"] = result.metrics.back().train_coarse_acc;
  }
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_eval(const ConfigArgs& args, const std::string& checkpoint, const std::string& out,
             const std::vector<int>& recall_ks) {
  const auto cfg = args.resolve();
  const auto ck = pehcm::load_checkpoint(checkpoint);
  const auto data = pehcm::load_datasets(cfg);
  if (data.eval.samples.empty()) throw pehcm::ConfigError("no evaluation pool: set eval_file or use synthetic data");
  pehcm::EvaluateOptions opt;
  opt.episodes = cfg.episodes;
  opt.metric = cfg.resolved_metric(ck.model.space);
  opt.k_nn = cfg.k_nn;
  opt.seed = cfg.seed;
  opt.recall_ks = recall_ks;
  write_json(out, report_json(pehcm::evaluate(ck.model, data.eval, opt)));
  return 0;
}

int cmd_gradcheck(const std::string& out) {
  const auto res = pehcm::run_gradcheck({});
  json j;
  j["passed"] = res.passed;
  j["max_rel_error"] = res.max_rel_error;
  j["tolerance"] = 1e-4;
  for (const auto& c : res.cases) {
    json cj;
    cj["case"] = c.spec.name;
    cj["max_rel_error"] = c.report.max_rel_error;
    for (const auto& g : c.report.groups) cj["groups"][g.name] = g.max_rel_error;
    j["cases"].push_back(cj);
  }
  write_json(out, j);
  return res.passed ? 0 : 2;
}

int cmd_cluster_inspect(const ConfigArgs& args, const std::string& checkpoint, const std::string& out) {
  const auto cfg = args.resolve();
  const auto ck = pehcm::load_checkpoint(checkpoint);
  const auto data = pehcm::load_datasets(cfg);
  const int num_classes = data.train.num_coarse();
  const pehcm::Matrix E = pehcm::embed(ck.model, data.train);
  pehcm::MemoryBank bank(num_classes, static_cast<std::size_t>(cfg.memory), E.cols());
  std::vector<int> coarse;
  for (const auto& s : data.train.samples) coarse.push_back(s.coarse);
  pehcm::memory_push(bank, E, coarse);
  const int k = cfg.resolved_k_clusters();
  const auto model = pehcm::recluster(bank, k, cfg.seed, cfg.kmeans_restarts);
  const auto pseudo = pehcm::assign_pseudo(E, coarse, model);

  json j;
  j["k_clusters"] = k;
  j["memory"] = cfg.memory;
  for (int c = 0; c < num_classes; ++c) {
    json cj;
    cj["coarse"] = c;
    cj["bank_size"] = bank.size(c);
    cj["has_model"] = model.has_model(c);
    std::vector<int> hist(static_cast<std::size_t>(k), 0);
    std::map<int, std::map<int, int>> by_fine;
    for (std::size_t i = 0; i < pseudo.size(); ++i) {
      if (coarse[i] != c || !pseudo[i]) continue;
      ++hist[static_cast<std::size_t>(*pseudo[i])];
      if (data.train.samples[i].fine_true) ++by_fine[*data.train.samples[i].fine_true][*pseudo[i]];
    }
    cj["centroids"] = model.has_model(c) ? k : 0;
    cj["nonempty_clusters"] = std::count_if(hist.begin(), hist.end(), [](int h) { return h > 0; });
    cj["histogram"] = hist;
    if (!by_fine.empty()) {
      json fj = json::object();
      for (const auto& [fine, counts] : by_fine) {
        json row = json::object();
        for (const auto& [cl, n] : counts) row[std::to_string(cl)] = n;
        fj[std::to_string(fine)] = row;
      }
      cj["fine_vs_cluster"] = fj;
    }
    j["classes"].push_back(cj);
  }
  write_json(out, j);
  return 0;
}

std::string svg_curves(const std::vector<std::pair<std::string, std::vector<pehcm::MetricsRow>>>& runs) {
  const double W = 640, H = 360, pad = 48;
  int max_epoch = 1;
  double lo = 0.0, hi = 1.0;
  for (const auto& [_, rows] : runs) {
    for (const auto& r : rows) {
      max_epoch = std::max(max_epoch, r.epoch);
      hi = std::max({hi, r.d1, r.d2});
      lo = std::min({lo, r.d1, r.d2});
    }
  }
  auto x = [&](double e) { return pad + (W - 2 * pad) * e / max_epoch; };
  auto y = [&](double v) { return H - pad - (H - 2 * pad) * (v - lo) / (hi - lo); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad << "\" y2=\"" << H - pad
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << H - pad
    << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">epoch</text>\n";
  o << "<text x=\"" << pad - 6 << "\" y=\"" << y(lo) << "\" text-anchor=\"end\">" << lo << "</text>\n";
  o << "<text x=\"" << pad - 6 << "\" y=\"" << y(hi) << "\" text-anchor=\"end\">" << hi << "</text>\n";
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  int series = 0;
  for (const auto& [name, rows] : runs) {
    for (int which = 0; which < 2; ++which) {
      o << "<polyline fill=\"none\" stroke=\"" << colors[series % 6] << "\"" << (which ? " stroke-dasharray=\"6,3\"" : "")
        << " points=\"";
      for (const auto& r : rows) o << x(r.epoch) << ',' << y(which ? r.d2 : r.d1) << ' ';
      o << "\"/>\n";
      o << "<text x=\"" << W - pad + 4 << "\" y=\"" << pad + 14 * (2 * series + which) << "\" fill=\""
        << colors[series % 6] << "\" font-size=\"11\">" << name << (which ? " d2" : " d1") << "</text>\n";
    }
    ++series;
  }
  o << "</svg>\n";
  return o.str();
}

int cmd_plot(const std::vector<std::string>& metrics, const std::string& svg, const std::vector<std::string>& sweep,
             const std::string& csv) {
  if (metrics.empty() && sweep.empty()) throw pehcm::ConfigError("plot: pass --metrics and/or --sweep");
  if (!metrics.empty()) {
    std::vector<std::pair<std::string, std::vector<pehcm::MetricsRow>>> runs;
    for (const auto& path : metrics) {
      runs.emplace_back(fs::path(path).parent_path().filename().string(),
                        pehcm::parse_metrics_csv(pehcm::io::read_file(path)));
    }
    const std::string out = svg.empty() ? "ahcd_curves.svg" : svg;
    pehcm::io::write_file_atomic(out, svg_curves(runs));
    std::cout << json{{"svg", out}}.dump() << '\n';
  }
  if (!sweep.empty()) {
    std::ostringstream o;
    o << "label,mode,n_way,mean_acc,ci95\n";
    for (const auto& item : sweep) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw pehcm::ConfigError("plot --sweep expects label=report.json, got " + item);
      const json r = json::parse(pehcm::io::read_file(item.substr(eq + 1)));
      o << item.substr(0, eq) << ',' << r.at("mode").get<std::string>() << ',' << r.at("n_way").get<int>() << ','
        << r.at("mean_acc").get<double>() << ',' << r.at("ci95").get<double>() << '\n';
    }
    const std::string out = csv.empty() ? "sweep.csv" : csv;
    pehcm::io::write_file_atomic(out, o.str());
    std::cout << json{{"csv", out}}.dump() << '\n';
  }
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Poincaré embeddings with hierarchical cosine margins"};
  app.require_subcommand(1);

  ConfigArgs gen_args, train_args, eval_args, inspect_args;
  std::string out_dir = "data", format = "csv";
  auto* gen = app.add_subcommand("gen-data", "write synthetic train/eval pools");
  gen_args.add_to(gen);
  gen->add_option("-o,--out-dir", out_dir, "output directory");
  gen->add_option("--format", format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));

  std::string run_dir = "run";
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train a model");
  train_args.add_to(train);
  train->add_option("-o,--out-dir", run_dir, "run directory for checkpoint and metrics");
  train->add_flag("-q,--quiet", quiet, "no per-epoch progress on stderr");

  std::string checkpoint, eval_out;
  std::vector<int> recall_ks;
  auto* eval = app.add_subcommand("eval", "episodic evaluation of a checkpoint");
  eval_args.add_to(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("-o,--out", eval_out, "report JSON path (default stdout)");
  eval->add_option("--recall", recall_ks, "also compute Recall@k for these k and mAP")->delimiter(',');

  std::string gc_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  gradcheck->add_option("-o,--out", gc_out, "report JSON path (default stdout)");

  std::string inspect_ck, inspect_out;
  auto* inspect = app.add_subcommand("cluster-inspect", "cluster the training embeddings of a checkpoint");
  inspect_args.add_to(inspect);
  inspect->add_option("--checkpoint", inspect_ck, "checkpoint file")->required();
  inspect->add_option("-o,--out", inspect_out, "JSON path (default stdout)");

  std::vector<std::string> plot_metrics, plot_sweep;
  std::string plot_svg, plot_csv;
  auto* plot = app.add_subcommand("plot", "render d1/d2 curves and sweep tables");
  plot->add_option("--metrics", plot_metrics, "metrics.csv files");
  plot->add_option("--svg", plot_svg, "SVG output for the d1/d2 curves");
  plot->add_option("--sweep", plot_sweep, "label=report.json entries");
  plot->add_option("--csv", plot_csv, "CSV output for the sweep table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 1;
  }

  try {
    threads_from_env();
    if (*gen) return cmd_gen_data(gen_args, out_dir, format);
    if (*train) return cmd_train(train_args, run_dir, quiet);
    if (*eval) return cmd_eval(eval_args, checkpoint, eval_out, recall_ks);
    if (*gradcheck) return cmd_gradcheck(gc_out);
    if (*inspect) return cmd_cluster_inspect(inspect_args, inspect_ck, inspect_out);
    if (*plot) return cmd_plot(plot_metrics, plot_svg, plot_sweep, plot_csv);
  } catch (const pehcm::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
