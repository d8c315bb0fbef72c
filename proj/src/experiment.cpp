#include "stalegraph/experiment.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <sstream>

#include "stalegraph/errors.hpp"
#include "stalegraph/metrics.hpp"

namespace stalegraph {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fixed(double v, int digits) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define STGN_UINT(expr)                                                                                     \
  Field {                                                                                                    \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.expr = to_uint(k, v); },       \
        [](const ExperimentConfig& c) { return std::to_string(c.expr); }                                     \
  }
#define STGN_REAL(expr)                                                                                      \
  Field {                                                                                                    \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.expr = to_double(k, v); },     \
        [](const ExperimentConfig& c) { return fmt(c.expr); }                                                \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"data", {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.data = v; },
                [](const ExperimentConfig& c) { return c.data; }}},
      {"backend",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v != "off" && v != "ball_tree" && v != "brute_force")
            throw ConfigError(k + ": expected off, ball_tree or brute_force, got '" + v + "'");
          c.backend = v;
        },
        [](const ExperimentConfig& c) { return c.backend; }}},
      {"synth.users", STGN_UINT(synth.num_users)},
      {"synth.items", STGN_UINT(synth.num_items)},
      {"synth.communities", STGN_UINT(synth.num_communities)},
      {"synth.events", STGN_UINT(synth.num_events)},
      {"synth.seed", STGN_UINT(synth.seed)},
      {"synth.intra_prob", STGN_REAL(synth.intra_prob)},
      {"synth.feature_noise", STGN_REAL(synth.feature_noise)},
      {"synth.dormancy_fraction", STGN_REAL(dormancy_fraction)},
      {"synth.dormancy_length", STGN_REAL(dormancy_length)},
      {"synth.dormancy_seed", STGN_UINT(dormancy_seed)},
      {"split.train_frac", STGN_REAL(split.train_frac)},
      {"split.val_frac", STGN_REAL(split.val_frac)},
      {"split.new_node_frac", STGN_REAL(split.new_node_frac)},
      {"split.seed", STGN_UINT(split.seed)},
      {"d_memory", STGN_UINT(engine.dims.d_memory)},
      {"d_time", STGN_UINT(engine.dims.d_time)},
      {"d_emb", STGN_UINT(engine.embedding.d_emb)},
      {"layers", STGN_UINT(engine.embedding.layers)},
      {"neighbors", STGN_UINT(engine.embedding.neighbors)},
      {"heads", STGN_UINT(engine.embedding.heads)},
      {"similar_mode",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "attention")
            c.engine.embedding.similar_mode = SimilarMode::attention;
          else if (v == "memory")
            c.engine.embedding.similar_mode = SimilarMode::memory;
          else
            throw ConfigError(k + ": expected attention or memory, got '" + v + "'");
        },
        [](const ExperimentConfig& c) {
          return std::string(c.engine.embedding.similar_mode == SimilarMode::attention ? "attention" : "memory");
        }}},
      {"combine",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "sum")
            c.engine.embedding.combine = Combine::sum;
          else if (v == "mean")
            c.engine.embedding.combine = Combine::mean;
          else
            throw ConfigError(k + ": expected sum or mean, got '" + v + "'");
        },
        [](const ExperimentConfig& c) {
          return std::string(c.engine.embedding.combine == Combine::sum ? "sum" : "mean");
        }}},
      {"alpha", STGN_REAL(engine.staleness.alpha)},
      {"staleness_scope",
       {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "sources")
            c.engine.staleness.apply_to = StalenessScope::sources_only;
          else if (v == "all")
            c.engine.staleness.apply_to = StalenessScope::all_endpoints;
          else
            throw ConfigError(k + ": expected sources or all, got '" + v + "'");
        },
        [](const ExperimentConfig& c) {
          return std::string(c.engine.staleness.apply_to == StalenessScope::sources_only ? "sources" : "all");
        }}},
      {"k", STGN_UINT(engine.similarity.k)},
      {"leaf_capacity", STGN_UINT(engine.similarity.leaf_capacity)},
      {"rebuild_every", STGN_UINT(engine.similarity.rebuild_every)},
      {"batch_size", STGN_UINT(engine.train.batch_size)},
      {"epochs", STGN_UINT(engine.train.epochs)},
      {"learning_rate", STGN_REAL(engine.train.adam.learning_rate)},
      {"beta1", STGN_REAL(engine.train.adam.beta1)},
      {"beta2", STGN_REAL(engine.train.adam.beta2)},
      {"epsilon", STGN_REAL(engine.train.adam.epsilon)},
      {"negatives_per_event", STGN_UINT(engine.train.negatives_per_event)},
      {"seed", STGN_UINT(engine.train.seed)},
  };
  return table;
}

#undef STGN_UINT
#undef STGN_REAL

std::vector<std::size_t> scope_positions(const EventStream& stream, const SplitResult& split, EvalScope scope) {
  switch (scope) {
    case EvalScope::transductive:
      return split.transductive(stream);
    case EvalScope::inductive:
      return split.inductive(stream);
    case EvalScope::combined:
      break;
  }
  std::vector<std::size_t> all(stream.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

std::string ExperimentConfig::serialize() const {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + "=" + field.get(*this) + "\n";
  return out;
}

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key=value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in);
}

void ExperimentConfig::finalize() {
  engine.staleness.enabled = backend != "off";
  if (backend == "ball_tree") engine.similarity.backend = KnnBackend::ball_tree;
  if (backend == "brute_force") engine.similarity.backend = KnnBackend::brute_force;
  if (dormancy_fraction < 0.0 || dormancy_fraction > 1.0) throw ConfigError("dormancy_fraction must be in [0, 1]");
  split.validate();
  engine.validate();
}

std::string ExperimentConfig::model_tag() const { return backend == "off" ? "baseline" : backend; }

EventStream load_stream(const ExperimentConfig& cfg) {
  if (cfg.data != "synth") return parse_jodie_csv(cfg.data);
  SynthConfig synth = cfg.synth;
  if (cfg.dormancy_fraction > 0.0)
    synth.dormancy = random_dormancy(synth, cfg.dormancy_fraction, cfg.dormancy_length, cfg.dormancy_seed);
  return generate_synthetic(synth);
}

EvalScope parse_scope(const std::string& s) {
  if (s == "trans") return EvalScope::transductive;
  if (s == "ind") return EvalScope::inductive;
  if (s == "all") return EvalScope::combined;
  throw ConfigError("scope must be trans, ind or all, got '" + s + "'");
}

std::string scope_name(EvalScope s) {
  switch (s) {
    case EvalScope::transductive:
      return "transductive";
    case EvalScope::inductive:
      return "inductive";
    case EvalScope::combined:
      break;
  }
  return "combined";
}

EvalResult score_scope(const ReplayScores& scores, const EventStream& stream, const SplitResult& split,
                       EvalScope scope, const std::string& model_tag, double quantile) {
  const auto positions = scope_positions(stream, split, scope);
  if (positions.empty()) throw MetricError("insufficient events");
  std::vector<double> s;
  std::vector<int> labels;
  for (std::size_t pos : positions) {
    s.push_back(scores.pos.at(pos));
    labels.push_back(1);
    for (std::size_t j = 0; j < scores.per_event; ++j) {
      s.push_back(scores.neg.at(pos * scores.per_event + j));
      labels.push_back(0);
    }
  }
  EvalResult r;
  r.auc = roc_auc(s, labels);
  r.average_precision = average_precision(s, labels);
  r.precision_at_half = precision_at(s, labels, 0.5);
  r.scope = scope;
  r.model_tag = model_tag;
  r.quantile = quantile;
  r.events = positions.size();
  return r;
}

std::uint64_t eval_negative_seed(const EngineConfig& cfg, const EventStream& stream) {
  const std::uint64_t first = stream.empty() ? 0 : stream.events.front().id;
  return cfg.train.seed * 0x9E3779B97F4A7C15ULL + first + 1;
}

EvalResult evaluate(EngineState& state, const EventStream& stream, const SplitResult& split, EvalScope scope,
                    const std::string& model_tag) {
  const auto scores = replay(state, stream, eval_negative_seed(state.cfg, stream));
  return score_scope(scores, stream, split, scope, model_tag, state.cfg.staleness.p());
}

std::map<EvalScope, std::optional<EvalResult>> evaluate_trained(const ExperimentConfig& cfg, const EngineState& trained,
                                                                const SplitResult& split, EvalResult* val) {
  EngineState state = trained;
  const std::string tag = cfg.model_tag();
  const double q = cfg.engine.staleness.p();
  const auto val_scores = replay(state, split.val, eval_negative_seed(state.cfg, split.val));
  if (val) *val = score_scope(val_scores, split.val, split, EvalScope::combined, tag, q);
  const auto test_scores = replay(state, split.test, eval_negative_seed(state.cfg, split.test));
  std::map<EvalScope, std::optional<EvalResult>> out;
  for (EvalScope s : {EvalScope::transductive, EvalScope::inductive, EvalScope::combined}) {
    try {
      out[s] = score_scope(test_scores, split.test, split, s, tag, q);
    } catch (const MetricError&) {
      out[s] = std::nullopt;
    }
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& given, const RunHooks& hooks) {
  ExperimentConfig cfg = given;
  const EventStream stream = load_stream(cfg);
  cfg.engine.dims.d_edge = stream.d_edge;
  cfg.finalize();

  ExperimentResult res;
  res.split = chronological_split(stream, cfg.split);
  res.state = init_engine(cfg.engine, stream.num_sources, stream.num_destinations);
  TrainHooks th;
  th.staleness_log = hooks.staleness_log;
  for (std::size_t e = 1; e <= cfg.engine.train.epochs; ++e) {
    res.epochs.push_back(train_epoch(res.state, res.split.train, e, th));
    if (hooks.epoch_log) *hooks.epoch_log << format_epoch_line(res.epochs.back()) << '\n';
  }
  res.test = evaluate_trained(cfg, res.state, res.split, &res.val);
  return res;
}

std::vector<AblationRow> run_ablation(const std::vector<double>& quantiles, const ExperimentConfig& base,
                                      const RunHooks& hooks) {
  std::vector<AblationRow> rows;
  for (double q : quantiles) {
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("ablation quantiles must lie in (0, 1)");
    ExperimentConfig cfg = base;
    cfg.engine.staleness.alpha = 1.0 - q;
    auto res = run_experiment(cfg, hooks);
    AblationRow row;
    row.model = cfg.model_tag();
    row.quantile = q;
    row.result = res.test.at(EvalScope::combined).value();
    row.result.quantile = q;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_text(const std::vector<AblationRow>& rows) {
  char line[128];
  std::string out;
  std::snprintf(line, sizeof line, "%-12s %8s %8s %10s\n", "model", "quantile", "AUC", "precision");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-12s %8s %8.4f %10.4f\n", r.model.c_str(), fmt(r.quantile).c_str(),
                  r.result.auc, r.result.average_precision);
    out += line;
  }
  return out;
}

std::string format_ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "model,quantile,auc,precision\n";
  for (const auto& r : rows)
    out += r.model + "," + fmt(r.quantile) + "," + fmt(r.result.auc) + "," + fmt(r.result.average_precision) + "\n";
  return out;
}

std::string format_eval_line(const EvalResult& r) {
  return "scope=" + scope_name(r.scope) + " model=" + r.model_tag + " quantile=" + fmt(r.quantile) +
         " events=" + std::to_string(r.events) + " auc=" + fixed(r.auc, 6) + " ap=" + fixed(r.average_precision, 6) +
         " precision@0.5=" + fixed(r.precision_at_half, 6);
}

}  // namespace stalegraph
