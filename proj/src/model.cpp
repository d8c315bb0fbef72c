#include "stalegraph/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "stalegraph/errors.hpp"

namespace stalegraph {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(adam.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (negatives_per_event < 1) throw ConfigError("negatives_per_event must be >= 1");
}

void EngineConfig::validate() const {
  embedding.validate();
  staleness.validate();
  similarity.validate();
  train.validate();
  if (dims.d_memory < 1 || dims.d_time < 1) throw ConfigError("d_memory and d_time must be >= 1");
  if (embedding.layers > 1 && embedding.d_emb == 0) throw ConfigError("d_emb must be >= 1");
}

ParameterStore init_parameters(const EngineConfig& cfg) {
  cfg.validate();
  ParameterStore store(cfg.train.seed);
  std::mt19937_64 rng(cfg.train.seed);
  const std::size_t dm = cfg.dims.d_memory;
  const std::size_t in = 2 * dm + cfg.dims.d_time + cfg.dims.d_edge;
  store.add_glorot("gru.w_ih", in, 3 * dm, rng);
  store.add_glorot("gru.w_hh", dm, 3 * dm, rng);
  store.add("gru.b_ih", Matrix(1, 3 * dm));
  store.add("gru.b_hh", Matrix(1, 3 * dm));
  add_embedding_parameters(store, cfg.dims, cfg.embedding, rng);
  const std::size_t de = cfg.embedding.d_emb;
  store.add_glorot("decoder.w1", 2 * de, de, rng);
  store.add("decoder.b1", Matrix(1, de));
  store.add_glorot("decoder.w2", de, 1, rng);
  store.add("decoder.b2", Matrix(1, 1));
  return store;
}

EngineState init_engine(const EngineConfig& cfg, std::size_t num_sources, std::size_t num_destinations) {
  EngineState s;
  s.cfg = cfg;
  s.num_sources = num_sources;
  s.num_destinations = num_destinations;
  s.params = init_parameters(cfg);
  s.memory = MemoryTable(num_sources + num_destinations, cfg.dims.d_memory);
  s.adjacency = TemporalAdjacency(num_sources + num_destinations, cfg.dims.d_edge);
  s.negative_rng.seed(cfg.train.seed + 1);
  return s;
}

void reset_stream_state(EngineState& state) {
  state.memory.reset();
  state.adjacency.clear();
  state.index.reset();
  state.index_built_at = 0;
}

std::vector<NodeId> sample_negatives(std::span<const Event> batch, std::size_t num_sources,
                                     std::size_t num_destinations, std::size_t per_event, std::mt19937_64& rng) {
  if (num_destinations < 2) throw ConfigError("sample_negatives: need at least two destinations");
  std::uniform_int_distribution<std::size_t> pick(0, num_destinations - 1);
  std::vector<NodeId> out;
  out.reserve(batch.size() * per_event);
  for (const Event& e : batch) {
    for (std::size_t j = 0; j < per_event; ++j) {
      NodeId n;
      do {
        n = num_sources + pick(rng);
      } while (n == e.destination);
      out.push_back(n);
    }
  }
  return out;
}

ad::Var decode_logits(const BoundParams& p, ad::Var src, ad::Var dst) {
  if (src.cols() != dst.cols() || src.rows() != dst.rows())
    throw ConfigError("decode: source and destination embeddings differ in shape");
  const ad::Var parts[] = {src, dst};
  auto hidden = ad::tanh(ad::add_row(ad::matmul(ad::concat_cols(parts), p["decoder.w1"]), p["decoder.b1"]));
  return ad::add_row(ad::matmul(hidden, p["decoder.w2"]), p["decoder.b2"]);
}

double link_probability(double logit) {
  const double z = std::clamp(logit, -ad::kLogitClamp, ad::kLogitClamp);
  return 1.0 / (1.0 + std::exp(-z));
}

double decode_link(const EmbeddingVector& src, const EmbeddingVector& dst, const ParameterStore& params) {
  if (src.values.size() != dst.values.size()) throw ConfigError("decode_link: embedding dimension mismatch");
  ad::Tape t;
  BoundParams p(t, params, false);
  auto logit = decode_logits(p, t.constant(Matrix::row_vector(src.values)), t.constant(Matrix::row_vector(dst.values)));
  return link_probability(logit.value()[0]);
}

const SimilarityIndex* prepare_index(EngineState& state, const StalenessReport& report) {
  if (report.stale_set.empty()) return nullptr;
  const bool stale_cache = !state.index || state.batch_counter - state.index_built_at >= state.cfg.similarity.rebuild_every;
  if (stale_cache) {
    state.index.emplace(collect_candidates(state.memory), state.cfg.similarity);
    state.index_built_at = state.batch_counter;
  }
  return &*state.index;
}

ad::Var batch_loss(const BoundParams& p, const EngineState& state, std::span<const Event> batch,
                   std::span<const NodeId> negatives, const StalenessReport& report, const SimilarityIndex* index,
                   std::vector<double>* pos_scores, std::vector<double>* neg_scores, std::size_t* augmented,
                   std::size_t* skipped) {
  ad::Tape& tape = p.tape();
  const EngineConfig& cfg = state.cfg;
  const std::size_t per_event = batch.empty() ? 0 : negatives.size() / batch.size();
  EmbeddingContext ctx(p, state.memory, state.adjacency, cfg.dims, cfg.embedding);
  auto emb = embed_targets(ctx, batch_targets(batch, negatives), report, index, cfg.similarity, cfg.embedding);
  if (augmented) *augmented = emb.augmented.size();
  if (skipped) *skipped = emb.skipped;

  std::map<NodeId, std::size_t> row_of;
  for (std::size_t i = 0; i < emb.targets.size(); ++i) row_of.emplace(emb.targets[i].node, i);
  std::vector<std::size_t> src_idx, dst_idx;
  src_idx.reserve(batch.size() * (1 + per_event));
  dst_idx.reserve(batch.size() * (1 + per_event));
  for (const Event& e : batch) {
    src_idx.push_back(row_of.at(e.source));
    dst_idx.push_back(row_of.at(e.destination));
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < per_event; ++j) {
      src_idx.push_back(row_of.at(batch[i].source));
      dst_idx.push_back(row_of.at(negatives[i * per_event + j]));
    }
  }
  auto logits = decode_logits(p, ad::gather_rows(emb.rows, std::move(src_idx)), ad::gather_rows(emb.rows, std::move(dst_idx)));
  std::vector<double> labels(logits.rows(), 0.0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(batch.size()), 1.0);

  const Matrix& lv = logits.value();
  if (pos_scores) {
    pos_scores->resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) (*pos_scores)[i] = link_probability(lv[i]);
  }
  if (neg_scores) {
    neg_scores->resize(negatives.size());
    for (std::size_t i = 0; i < negatives.size(); ++i) (*neg_scores)[i] = link_probability(lv[batch.size() + i]);
  }
  (void)tape;
  return ad::bce_with_logits(logits, std::move(labels));
}

BatchOutcome process_batch(EngineState& state, std::span<const Event> batch, BatchMode mode,
                           std::mt19937_64& negative_rng) {
  BatchOutcome out;
  if (batch.empty()) return out;
  const EngineConfig& cfg = state.cfg;

  // 1-2: staleness from pre-batch memory, index over pre-batch candidates.
  out.report = staleness_report(batch, state.memory, cfg.staleness);
  const SimilarityIndex* index = prepare_index(state, out.report);

  // 3-5: embeddings, loss, and (train mode) one optimizer step.
  const auto negatives =
      sample_negatives(batch, state.num_sources, state.num_destinations, cfg.train.negatives_per_event, negative_rng);
  {
    ad::Tape tape;
    const bool train = mode == BatchMode::train;
    BoundParams p(tape, state.params, train);
    auto diagnose = [&](const std::string& what) {
      std::ostringstream msg;
      msg << "non-finite loss at batch " << state.batch_counter << " (" << what << "); parameter norms:";
      for (const auto& [name, norm] : state.params.norms()) msg << ' ' << name << '=' << norm;
      return NumericError(msg.str());
    };
    std::optional<ad::Var> loss;
    try {
      loss = batch_loss(p, state, batch, negatives, out.report, index, &out.pos_scores, &out.neg_scores,
                        &out.augmented, &out.skipped);
    } catch (const NumericError& e) {
      throw diagnose(e.what());
    }
    out.loss = loss->value()[0];
    if (!std::isfinite(out.loss)) throw diagnose("loss");
    if (train) {
      tape.backward(*loss);
      adam_step(state.params, p.gradients(), state.adam, cfg.train.adam);
    }
  }

  // 6: messages from pre-batch memory, aggregated, applied; then the adjacency.
  const TimeEncoder enc = TimeEncoder::from(state.params);
  std::vector<RawMessage> msgs;
  msgs.reserve(2 * batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto [m_src, m_dst] = compute_messages(state.memory, batch[i], enc, i);
    msgs.push_back(std::move(m_src));
    msgs.push_back(std::move(m_dst));
  }
  update_memory_batch(state.memory, aggregate_messages(msgs), state.params);
  for (const Event& e : batch) state.adjacency.insert(e);
  ++state.batch_counter;
  return out;
}

std::string format_epoch_line(const EpochStats& s) {
  std::ostringstream o;
  o.precision(10);
  o << "epoch=" << s.epoch << " mean_loss=" << s.mean_loss << " stale_fraction=" << s.stale_fraction()
    << " wall_seconds=" << s.wall_seconds;
  return o.str();
}

std::string format_staleness_line(std::size_t batch, const StalenessReport& r) {
  std::ostringstream o;
  o.precision(10);
  o << "batch=" << batch << " n=" << r.deltas.size() << " threshold=";
  if (r.has_threshold)
    o << r.threshold;
  else
    o << "none";
  o << " stale=" << r.stale_set.size();
  return o.str();
}

EpochStats train_epoch(EngineState& state, const EventStream& train, std::size_t epoch, const TrainHooks& hooks) {
  const auto start = std::chrono::steady_clock::now();
  reset_stream_state(state);
  EpochStats stats;
  stats.epoch = epoch;
  double total = 0.0;
  std::size_t b = 0;
  for (auto batch : batch_iter(train, state.cfg.train.batch_size)) {
    auto out = process_batch(state, batch, BatchMode::train, state.negative_rng);
    if (hooks.staleness_log) *hooks.staleness_log << format_staleness_line(b, out.report) << '\n';
    total += out.loss;
    stats.batch_losses.push_back(out.loss);
    stats.stale_nodes += out.report.stale_set.size();
    stats.scored_nodes += out.report.deltas.size();
    ++b;
  }
  stats.batches = b;
  stats.mean_loss = b ? total / static_cast<double>(b) : 0.0;
  stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

ReplayScores replay(EngineState& state, const EventStream& stream, std::uint64_t negative_seed,
                    const TrainHooks& hooks) {
  std::mt19937_64 rng(negative_seed);
  ReplayScores scores;
  scores.per_event = state.cfg.train.negatives_per_event;
  std::size_t b = 0;
  for (auto batch : batch_iter(stream, state.cfg.train.batch_size)) {
    auto out = process_batch(state, batch, BatchMode::eval, rng);
    if (hooks.staleness_log) *hooks.staleness_log << format_staleness_line(b, out.report) << '\n';
    scores.pos.insert(scores.pos.end(), out.pos_scores.begin(), out.pos_scores.end());
    scores.neg.insert(scores.neg.end(), out.neg_scores.begin(), out.neg_scores.end());
    ++b;
  }
  return scores;
}

}  // namespace stalegraph
