#pragma once

// Experiment plumbing shared by the CLI and the acceptance tests: flat
// key=value configuration, train/evaluate runs, and the quantile ablation.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stalegraph/ingest.hpp"
#include "stalegraph/model.hpp"

namespace stalegraph {

struct ExperimentConfig {
  std::string data = "synth";  // "synth" or a CSV path
  SynthConfig synth;
  double dormancy_fraction = 0.0;  // of users, for the synthetic stream
  double dormancy_length = 0.15;   // window length relative to the stream horizon
  std::uint64_t dormancy_seed = 0;
  SplitSpec split;
  EngineConfig engine;
  std::string backend = "off";  // off | ball_tree | brute_force

  /// Applies one key=value pair. Throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// One key=value per line, keys sorted; parse(serialize()) reproduces the config.
  std::string serialize() const;
  static ExperimentConfig parse(std::istream& in);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Makes engine.staleness/similarity agree with `backend` and validates everything.
  void finalize();

  std::string model_tag() const;  // baseline | ball_tree | brute_force
};

/// Loads or generates the stream described by cfg.
EventStream load_stream(const ExperimentConfig& cfg);

enum class EvalScope { transductive, inductive, combined };
EvalScope parse_scope(const std::string& s);  // trans | ind | all
std::string scope_name(EvalScope s);

struct EvalResult {
  double auc = 0.0;
  double average_precision = 0.0;
  double precision_at_half = 0.0;
  EvalScope scope = EvalScope::combined;
  std::string model_tag;
  double quantile = 0.0;
  std::size_t events = 0;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

/// Metrics over the events of `scored` (positions into `stream`) selected by scope.
/// Throws MetricError("insufficient events") when the subset is empty.
EvalResult score_scope(const ReplayScores& scores, const EventStream& stream, const SplitResult& split,
                       EvalScope scope, const std::string& model_tag, double quantile);

/// Seed for the evaluation negatives of a split: fixed by the train seed and the split's first event.
std::uint64_t eval_negative_seed(const EngineConfig& cfg, const EventStream& stream);

/// Replays `stream` with frozen parameters (memory advances) and scores it.
EvalResult evaluate(EngineState& state, const EventStream& stream, const SplitResult& split, EvalScope scope,
                    const std::string& model_tag);

struct ExperimentResult {
  SplitResult split;
  EngineState state;  // positioned at the end of the train split
  std::vector<EpochStats> epochs;
  EvalResult val;
  std::map<EvalScope, std::optional<EvalResult>> test;  // empty optional: scope had no events
};

struct RunHooks {
  std::ostream* epoch_log = nullptr;
  std::ostream* staleness_log = nullptr;
};

/// Trains on a fresh engine, then replays the validation split and scores the test split.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunHooks& hooks = {});

/// Replays val then scores test from a trained state (copied, not modified).
std::map<EvalScope, std::optional<EvalResult>> evaluate_trained(const ExperimentConfig& cfg, const EngineState& trained,
                                                                const SplitResult& split, EvalResult* val = nullptr);

struct AblationRow {
  std::string model;
  double quantile = 0.0;
  EvalResult result;

  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

/// One train/evaluate run per quantile (alpha = 1 - q) on the combined test scope.
std::vector<AblationRow> run_ablation(const std::vector<double>& quantiles, const ExperimentConfig& base,
                                      const RunHooks& hooks = {});

/// Columns: model, quantile, AUC, precision.
std::string format_ablation_text(const std::vector<AblationRow>& rows);
std::string format_ablation_csv(const std::vector<AblationRow>& rows);

/// "scope=.. model=.. quantile=.. events=.. auc=.. ap=.. precision@0.5=.."
std::string format_eval_line(const EvalResult& r);

}  // namespace stalegraph
