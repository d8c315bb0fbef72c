#pragma once

// Node embeddings: temporal graph attention over the last-N neighbors and the
// augmentation of stale nodes with their nearest neighbors in memory space:
//
//   emb(i) = SelfTerm(i) + combine_k SimilarTerm(k) + Attention(i)   if i is stale
//   emb(i) = Attention(i)                                              otherwise
//
// All computations are batched on a tape so the same code serves training
// (gradients) and inference (constants).

#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "stalegraph/memory.hpp"
#include "stalegraph/params.hpp"
#include "stalegraph/similarity.hpp"
#include "stalegraph/staleness.hpp"
#include "stalegraph/temporal_store.hpp"

namespace stalegraph {

enum class SimilarMode { attention, memory };
enum class Combine { sum, mean };

struct ModelDims {
  std::size_t d_memory = 32;
  std::size_t d_time = 16;
  std::size_t d_edge = 0;
};

struct EmbeddingConfig {
  std::size_t layers = 1;
  std::size_t neighbors = 10;
  std::size_t heads = 2;
  std::size_t d_emb = 32;
  SimilarMode similar_mode = SimilarMode::attention;
  Combine combine = Combine::sum;

  void validate() const;
};

struct EmbeddingVector {
  std::vector<double> values;
  NodeId node = 0;
  double at_time = 0.0;
};

struct EmbeddingRequest {
  NodeId node = 0;
  double time = 0.0;
};

/// Adds time encoder, attention and (if needed) self-map parameters.
void add_embedding_parameters(ParameterStore& store, const ModelDims& dims, const EmbeddingConfig& cfg,
                              std::mt19937_64& rng);

/// One forward pass over fixed memory/adjacency snapshots.
class EmbeddingContext {
 public:
  /// With trainable parameters the rows touched by the latest memory update
  /// are recomputed on the tape so the updater receives gradients.
  EmbeddingContext(const BoundParams& params, const MemoryTable& mem, const TemporalAdjacency& adj,
                   const ModelDims& dims, const EmbeddingConfig& cfg);

  /// Memory rows (layer-0 representations).
  ad::Var memory_rows(std::span<const NodeId> nodes);
  /// Memory rows through the dimension-matching map (identity when d_memory == d_emb).
  ad::Var self_term(std::span<const NodeId> nodes);
  /// Top-layer attention embeddings, one row per request. Optionally returns
  /// the top layer's attention weights (see ad::segment_attention) and offsets.
  ad::Var attention(std::span<const EmbeddingRequest> requests, std::vector<double>* weights = nullptr,
                    std::vector<std::size_t>* offsets = nullptr);

  const BoundParams& params() const { return params_; }
  const MemoryTable& memory() const { return mem_; }

 private:
  ad::Var layer(std::size_t l, std::span<const EmbeddingRequest> requests, std::vector<double>* weights,
                std::vector<std::size_t>* offsets);

  const BoundParams& params_;
  const MemoryTable& mem_;
  const TemporalAdjacency& adj_;
  ModelDims dims_;
  EmbeddingConfig cfg_;
  std::optional<ad::Var> refreshed_;
  std::unordered_map<NodeId, std::size_t> pending_row_;
};

/// Per-target augmentation decision (kept for diagnostics and tests).
struct Augmentation {
  std::size_t target = 0;  // index into the target list
  std::vector<Neighbor> similar;
};

struct TargetEmbeddings {
  std::vector<EmbeddingRequest> targets;
  ad::Var rows;
  std::vector<Augmentation> augmented;
  std::size_t skipped = 0;  // stale targets with no available similar node
};

/// Embeds each target, augmenting those in report.stale_set.
TargetEmbeddings embed_targets(EmbeddingContext& ctx, std::vector<EmbeddingRequest> targets,
                               const StalenessReport& report, const SimilarityIndex* index,
                               const SimilarityConfig& sim_cfg, const EmbeddingConfig& cfg);

/// Every batch endpoint and negative, each at the timestamp of its first event in the batch; sorted by node id.
std::vector<EmbeddingRequest> batch_targets(std::span<const Event> batch, std::span<const NodeId> negatives);

/// Inference-only single embedding (no augmentation).
EmbeddingVector attention_embed(NodeId node, double t, const MemoryTable& mem, const TemporalAdjacency& adj,
                                const ParameterStore& params, const ModelDims& dims, const EmbeddingConfig& cfg);

/// Inference-only batch embedding keyed by node id.
std::map<NodeId, EmbeddingVector> embed_batch(std::span<const Event> batch, std::span<const NodeId> negatives,
                                              const MemoryTable& mem, const TemporalAdjacency& adj,
                                              const ParameterStore& params, const ModelDims& dims,
                                              const EmbeddingConfig& cfg, const StalenessReport& report,
                                              const SimilarityIndex* index, const SimilarityConfig& sim_cfg);

}  // namespace stalegraph
