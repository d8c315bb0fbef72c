#include "stalegraph/embedding.hpp"

#include <algorithm>
#include <string>

#include "stalegraph/errors.hpp"

namespace stalegraph {
namespace {

std::string layer_name(std::size_t l, const char* what) { return "attn" + std::to_string(l) + "." + what; }

std::size_t layer_input(std::size_t l, const ModelDims& dims, const EmbeddingConfig& cfg) {
  return l == 1 ? dims.d_memory : cfg.d_emb;
}

}  // namespace

void EmbeddingConfig::validate() const {
  if (layers < 1) throw ConfigError("embedding layers must be >= 1");
  if (neighbors < 1) throw ConfigError("embedding neighbors must be >= 1");
  if (heads < 1 || d_emb % heads != 0) throw ConfigError("d_emb must be divisible by heads");
}

void add_embedding_parameters(ParameterStore& store, const ModelDims& dims, const EmbeddingConfig& cfg,
                              std::mt19937_64& rng) {
  cfg.validate();
  store.add("time.freq", Matrix::row_vector(geometric_frequencies(dims.d_time)));
  store.add("time.phase", Matrix(1, dims.d_time));
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    const std::size_t in = layer_input(l, dims, cfg);
    store.add_glorot(layer_name(l, "wq"), in + dims.d_time, cfg.d_emb, rng);
    store.add_glorot(layer_name(l, "wk"), in + dims.d_edge + dims.d_time, cfg.d_emb, rng);
    store.add_glorot(layer_name(l, "wv"), in + dims.d_edge + dims.d_time, cfg.d_emb, rng);
    store.add_glorot(layer_name(l, "ffn_w1"), cfg.d_emb + in, cfg.d_emb, rng);
    store.add(layer_name(l, "ffn_b1"), Matrix(1, cfg.d_emb));
    store.add_glorot(layer_name(l, "ffn_w2"), cfg.d_emb, cfg.d_emb, rng);
    store.add(layer_name(l, "ffn_b2"), Matrix(1, cfg.d_emb));
  }
  if (dims.d_memory != cfg.d_emb) store.add_glorot("self_map", dims.d_memory, cfg.d_emb, rng);
}

EmbeddingContext::EmbeddingContext(const BoundParams& params, const MemoryTable& mem, const TemporalAdjacency& adj,
                                   const ModelDims& dims, const EmbeddingConfig& cfg)
    : params_(params), mem_(mem), adj_(adj), dims_(dims), cfg_(cfg) {
  cfg_.validate();
  if (mem.dim() != dims.d_memory) throw ConfigError("embedding: memory width differs from d_memory");
  if (params.trainable() && !mem.pending().empty()) {
    refreshed_ = refresh_pending(params, mem);
    for (std::size_t i = 0; i < mem.pending().size(); ++i) pending_row_.emplace(mem.pending()[i].target, i);
  }
}

ad::Var EmbeddingContext::memory_rows(std::span<const NodeId> nodes) {
  ad::Tape& t = params_.tape();
  Matrix rows(nodes.size(), mem_.dim());
  bool any_pending = false;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto s = mem_.state(nodes[i]);
    std::copy(s.begin(), s.end(), rows.row(i).begin());
    any_pending = any_pending || pending_row_.count(nodes[i]);
  }
  if (!any_pending) return t.constant(std::move(rows));
  const std::size_t offset = refreshed_->rows();
  std::vector<std::size_t> index(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto it = pending_row_.find(nodes[i]);
    index[i] = it != pending_row_.end() ? it->second : offset + i;
  }
  const ad::Var parts[] = {*refreshed_, t.constant(std::move(rows))};
  return ad::gather_rows(ad::concat_rows(parts), std::move(index));
}

ad::Var EmbeddingContext::self_term(std::span<const NodeId> nodes) {
  auto rows = memory_rows(nodes);
  if (dims_.d_memory == cfg_.d_emb) return rows;
  return ad::matmul(rows, params_["self_map"]);
}

ad::Var EmbeddingContext::attention(std::span<const EmbeddingRequest> requests, std::vector<double>* weights,
                                    std::vector<std::size_t>* offsets) {
  return layer(cfg_.layers, requests, weights, offsets);
}

ad::Var EmbeddingContext::layer(std::size_t l, std::span<const EmbeddingRequest> requests,
                                std::vector<double>* weights, std::vector<std::size_t>* offsets_out) {
  if (l == 0) {
    std::vector<NodeId> nodes(requests.size());
    for (std::size_t i = 0; i < requests.size(); ++i) nodes[i] = requests[i].node;
    return memory_rows(nodes);
  }
  ad::Tape& t = params_.tape();
  const BoundParams& p = params_;

  std::vector<EmbeddingRequest> nbr_requests;
  std::vector<std::size_t> offsets{0};
  std::vector<EventId> nbr_events;
  Matrix dt_keys;
  {
    std::vector<double> dts;
    for (const EmbeddingRequest& r : requests) {
      for (const NeighborRecord& rec : adj_.last_n(r.node, r.time, cfg_.neighbors)) {
        nbr_requests.push_back({rec.neighbor, rec.timestamp});
        nbr_events.push_back(rec.event_id);
        dts.push_back(r.time - rec.timestamp);
      }
      offsets.push_back(nbr_requests.size());
    }
    const std::size_t n = dts.size();
    dt_keys = Matrix(n, 1, std::move(dts));
  }
  Matrix edges(nbr_events.size(), dims_.d_edge);
  for (std::size_t i = 0; i < nbr_events.size(); ++i) {
    const auto f = adj_.edge_features(nbr_events[i]);
    std::copy(f.begin(), f.end(), edges.row(i).begin());
  }

  auto h_self = layer(l - 1, requests, nullptr, nullptr);
  auto h_nbr = layer(l - 1, nbr_requests, nullptr, nullptr);

  const ad::Var q_parts[] = {h_self, time_encode(p, Matrix(requests.size(), 1))};
  auto q = ad::matmul(ad::concat_cols(q_parts), p[layer_name(l, "wq")]);
  const ad::Var k_parts[] = {h_nbr, t.constant(std::move(edges)), time_encode(p, dt_keys)};
  auto k_in = ad::concat_cols(k_parts);
  auto k = ad::matmul(k_in, p[layer_name(l, "wk")]);
  auto v = ad::matmul(k_in, p[layer_name(l, "wv")]);
  if (offsets_out) *offsets_out = offsets;
  auto att = ad::segment_attention(q, k, v, std::move(offsets), cfg_.heads, weights);

  const ad::Var f_parts[] = {att, h_self};
  auto hidden = ad::tanh(ad::add_row(ad::matmul(ad::concat_cols(f_parts), p[layer_name(l, "ffn_w1")]),
                                     p[layer_name(l, "ffn_b1")]));
  return ad::add_row(ad::matmul(hidden, p[layer_name(l, "ffn_w2")]), p[layer_name(l, "ffn_b2")]);
}

std::vector<EmbeddingRequest> batch_targets(std::span<const Event> batch, std::span<const NodeId> negatives) {
  if (!batch.empty() && negatives.size() % batch.size() != 0)
    throw ConfigError("batch_targets: negatives must be a whole number per event");
  const std::size_t per_event = batch.empty() ? 0 : negatives.size() / batch.size();
  std::map<NodeId, double> first;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Event& e = batch[i];
    first.emplace(e.source, e.timestamp);
    first.emplace(e.destination, e.timestamp);
    for (std::size_t j = 0; j < per_event; ++j) first.emplace(negatives[i * per_event + j], e.timestamp);
  }
  std::vector<EmbeddingRequest> out;
  out.reserve(first.size());
  for (const auto& [n, t] : first) out.push_back({n, t});
  return out;
}

TargetEmbeddings embed_targets(EmbeddingContext& ctx, std::vector<EmbeddingRequest> targets,
                               const StalenessReport& report, const SimilarityIndex* index,
                               const SimilarityConfig& sim_cfg, const EmbeddingConfig& cfg) {
  TargetEmbeddings out;
  out.targets = std::move(targets);
  const auto& tg = out.targets;

  std::vector<std::size_t> stale;
  for (std::size_t i = 0; i < tg.size(); ++i)
    if (report.stale_set.count(tg[i].node)) stale.push_back(i);

  if (!stale.empty() && (index == nullptr || index->empty())) {
    out.skipped = stale.size();
    stale.clear();
  }
  std::vector<std::vector<Neighbor>> found(stale.size());
  const auto ns = static_cast<std::ptrdiff_t>(stale.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t s = 0; s < ns; ++s) {
    const NodeId node = tg[stale[static_cast<std::size_t>(s)]].node;
    found[static_cast<std::size_t>(s)] = index->query(ctx.memory().state(node), sim_cfg.k, {node});
  }
  for (std::size_t s = 0; s < stale.size(); ++s) {
    if (found[s].empty()) {
      ++out.skipped;
      continue;
    }
    out.augmented.push_back({stale[s], std::move(found[s])});
  }

  std::vector<EmbeddingRequest> requests = tg;
  if (cfg.similar_mode == SimilarMode::attention)
    for (const Augmentation& a : out.augmented)
      for (const Neighbor& n : a.similar) requests.push_back({n.id, tg[a.target].time});

  ad::Var g = ctx.attention(requests);
  if (out.augmented.empty()) {
    out.rows = g;
    return out;
  }

  std::vector<NodeId> aug_nodes;
  std::vector<std::size_t> aug_rows;
  std::vector<std::size_t> sim_offsets{0};
  std::vector<NodeId> sim_nodes;
  std::vector<double> mean_factors;
  for (const Augmentation& a : out.augmented) {
    aug_nodes.push_back(tg[a.target].node);
    aug_rows.push_back(a.target);
    for (const Neighbor& n : a.similar) sim_nodes.push_back(n.id);
    sim_offsets.push_back(sim_nodes.size());
    mean_factors.push_back(1.0 / static_cast<double>(a.similar.size()));
  }

  ad::Var sim_rows;
  if (cfg.similar_mode == SimilarMode::attention) {
    std::vector<std::size_t> idx(sim_nodes.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = tg.size() + i;
    sim_rows = ad::gather_rows(g, std::move(idx));
  } else {
    sim_rows = ctx.self_term(sim_nodes);
  }
  auto similar = ad::segment_sum(sim_rows, std::move(sim_offsets));
  if (cfg.combine == Combine::mean) similar = ad::scale_rows(similar, std::move(mean_factors));

  // (SelfTerm + SimilarTerm) + Attention
  auto augmented = ad::add(ad::add(ctx.self_term(aug_nodes), similar), ad::gather_rows(g, aug_rows));

  std::vector<std::size_t> final_index(tg.size());
  for (std::size_t i = 0; i < tg.size(); ++i) final_index[i] = i;
  for (std::size_t a = 0; a < aug_rows.size(); ++a) final_index[aug_rows[a]] = g.rows() + a;
  const ad::Var parts[] = {g, augmented};
  out.rows = ad::gather_rows(ad::concat_rows(parts), std::move(final_index));
  return out;
}

EmbeddingVector attention_embed(NodeId node, double t, const MemoryTable& mem, const TemporalAdjacency& adj,
                                const ParameterStore& params, const ModelDims& dims, const EmbeddingConfig& cfg) {
  params.check_finite();
  ad::Tape tape;
  BoundParams p(tape, params, false);
  EmbeddingContext ctx(p, mem, adj, dims, cfg);
  const EmbeddingRequest req{node, t};
  const Matrix& row = ctx.attention(std::span<const EmbeddingRequest>(&req, 1)).value();
  return {row.values(), node, t};
}

std::map<NodeId, EmbeddingVector> embed_batch(std::span<const Event> batch, std::span<const NodeId> negatives,
                                              const MemoryTable& mem, const TemporalAdjacency& adj,
                                              const ParameterStore& params, const ModelDims& dims,
                                              const EmbeddingConfig& cfg, const StalenessReport& report,
                                              const SimilarityIndex* index, const SimilarityConfig& sim_cfg) {
  params.check_finite();
  ad::Tape tape;
  BoundParams p(tape, params, false);
  EmbeddingContext ctx(p, mem, adj, dims, cfg);
  auto res = embed_targets(ctx, batch_targets(batch, negatives), report, index, sim_cfg, cfg);
  const Matrix& rows = res.rows.value();
  std::map<NodeId, EmbeddingVector> out;
  for (std::size_t i = 0; i < res.targets.size(); ++i) {
    const auto r = rows.row(i);
    out.emplace(res.targets[i].node, EmbeddingVector{{r.begin(), r.end()}, res.targets[i].node, res.targets[i].time});
  }
  return out;
}

}  // namespace stalegraph
