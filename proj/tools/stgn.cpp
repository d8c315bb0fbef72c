// Command-line driver: train, eval, ablate, gen-synth.

#include <deque>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stalegraph/checkpoint.hpp"
#include "stalegraph/errors.hpp"
#include "stalegraph/experiment.hpp"
#include "stalegraph/ingest.hpp"

using namespace stalegraph;

namespace {

struct Overrides {
  std::vector<std::pair<CLI::Option*, std::string>> options;
  std::deque<std::string> values;  // stable addresses for CLI11 bindings

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    values.emplace_back();
    options.emplace_back(app->add_option(flag, values.back(), help), key);
  }

  /// Config file first, then every flag that was given on the command line.
  ExperimentConfig resolve(const std::string& config_path) const {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    for (std::size_t i = 0; i < options.size(); ++i)
      if (options[i].first->count()) cfg.set(options[i].second, values[i]);
    return cfg;
  }
};

std::unique_ptr<std::ofstream> open_log(const std::string& path) {
  if (path.empty()) return nullptr;
  auto out = std::make_unique<std::ofstream>(path);
  if (!*out) throw UsageError("cannot open log file " + path);
  return out;
}

void add_common(CLI::App* cmd, Overrides& o) {
  o.add(cmd, "--data", "data", "CSV path or 'synth'");
  o.add(cmd, "--backend", "backend", "off, ball_tree or brute_force");
  o.add(cmd, "--alpha", "alpha", "staleness tail fraction (quantile p = 1 - alpha)");
  o.add(cmd, "--epochs", "epochs", "training epochs");
  o.add(cmd, "--seed", "seed", "parameter and negative-sampling seed");
  o.add(cmd, "--batch-size", "batch_size", "events per batch");
  o.add(cmd, "--lr", "learning_rate", "Adam learning rate");
  o.add(cmd, "--k", "k", "similar nodes per stale node");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal graph link prediction with stale-node augmentation"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, scope = "all", staleness_log, csv_path, quantiles_arg;

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  Overrides train_o;
  train->add_option("--config", config_path, "key=value config file");
  add_common(train, train_o);
  train->add_option("--out", out_path, "checkpoint path")->required();
  train->add_option("--log-staleness", staleness_log, "write one staleness line per batch to this file");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  eval->add_option("--scope", scope, "trans, ind or all")->check(CLI::IsMember({"trans", "ind", "all"}));
  eval->add_option("--log-staleness", staleness_log, "write one staleness line per batch to this file");

  auto* ablate = app.add_subcommand("ablate", "one run per staleness quantile");
  Overrides ablate_o;
  ablate->add_option("--config", config_path, "key=value config file");
  add_common(ablate, ablate_o);
  ablate->add_option("--quantiles", quantiles_arg, "comma-separated quantiles")->required();
  ablate->add_option("--csv", csv_path, "also write the table as CSV to this file");

  auto* gen = app.add_subcommand("gen-synth", "write a synthetic interaction stream as CSV");
  SynthConfig synth;
  double dormancy_fraction = 0.0, dormancy_length = 0.15;
  gen->add_option("--users", synth.num_users, "number of users");
  gen->add_option("--items", synth.num_items, "number of items");
  gen->add_option("--communities", synth.num_communities, "number of communities");
  gen->add_option("--events", synth.num_events, "number of events");
  gen->add_option("--seed", synth.seed, "generator seed");
  gen->add_option("--intra-prob", synth.intra_prob, "probability of an in-community item");
  gen->add_option("--dormancy-fraction", dormancy_fraction, "fraction of users given a dormancy window");
  gen->add_option("--dormancy-length", dormancy_length, "dormancy window length relative to the horizon");
  gen->add_option("--out", out_path, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      ExperimentConfig cfg = train_o.resolve(config_path);
      auto slog = open_log(staleness_log);
      RunHooks hooks{&std::cout, slog.get()};
      auto res = run_experiment(cfg, hooks);
      cfg.engine.dims.d_edge = res.state.cfg.dims.d_edge;
      cfg.finalize();
      std::cout << "val " << format_eval_line(res.val) << '\n';
      for (const auto& [s, r] : res.test) {
        if (r)
          std::cout << "test " << format_eval_line(*r) << '\n';
        else
          std::cout << "test scope=" << scope_name(s) << " insufficient events\n";
      }
      save_checkpoint(cfg, res.state, out_path);
      std::cout << "checkpoint " << out_path << '\n';
    } else if (*eval) {
      const Checkpoint ck = load_checkpoint(ckpt_path);
      const EventStream stream = load_stream(ck.config);
      const SplitResult split = chronological_split(stream, ck.config.split);
      EngineState state = ck.state;
      auto slog = open_log(staleness_log);
      TrainHooks th{slog.get()};
      replay(state, split.val, eval_negative_seed(state.cfg, split.val), th);
      const auto scores = replay(state, split.test, eval_negative_seed(state.cfg, split.test), th);
      const auto r = score_scope(scores, split.test, split, parse_scope(scope), ck.config.model_tag(),
                                 ck.config.engine.staleness.p());
      std::cout << format_eval_line(r) << '\n';
    } else if (*ablate) {
      ExperimentConfig cfg = ablate_o.resolve(config_path);
      if (cfg.backend == "off" && !ablate_o.options[1].first->count()) cfg.backend = "ball_tree";
      std::vector<double> qs;
      std::stringstream ss(quantiles_arg);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
          qs.push_back(std::stod(item));
        } catch (const std::exception&) {
          throw UsageError("bad quantile '" + item + "'");
        }
      }
      const auto rows = run_ablation(qs, cfg);
      std::cout << format_ablation_text(rows) << '\n' << format_ablation_csv(rows);
      if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        if (!csv) throw UsageError("cannot open " + csv_path);
        csv << format_ablation_csv(rows);
      }
    } else if (*gen) {
      if (dormancy_fraction > 0.0) synth.dormancy = random_dormancy(synth, dormancy_fraction, dormancy_length, synth.seed);
      write_jodie_csv(generate_synthetic(synth), out_path);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
