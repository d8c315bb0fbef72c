#pragma once

// The streaming link-prediction engine: all mutable state plus the per-batch
// pipeline
//   staleness report -> similarity index -> embeddings -> loss
//   -> backward + Adam -> messages -> memory update -> adjacency insert.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stalegraph/embedding.hpp"
#include "stalegraph/ingest.hpp"
#include "stalegraph/memory.hpp"
#include "stalegraph/params.hpp"
#include "stalegraph/similarity.hpp"
#include "stalegraph/staleness.hpp"
#include "stalegraph/temporal_store.hpp"

namespace stalegraph {

struct TrainConfig {
  std::size_t batch_size = 200;
  std::size_t epochs = 10;
  AdamConfig adam;
  std::size_t negatives_per_event = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EngineConfig {
  ModelDims dims;
  EmbeddingConfig embedding;
  StalenessConfig staleness;
  SimilarityConfig similarity;
  TrainConfig train;

  void validate() const;
};

struct EngineState {
  EngineConfig cfg;
  std::size_t num_sources = 0;
  std::size_t num_destinations = 0;
  ParameterStore params;
  AdamState adam;
  MemoryTable memory;
  TemporalAdjacency adjacency;
  std::mt19937_64 negative_rng;
  std::uint64_t batch_counter = 0;
  std::optional<SimilarityIndex> index;
  std::uint64_t index_built_at = 0;
};

/// GRU, time encoder, attention, decoder (and self map) initialised from cfg.train.seed.
ParameterStore init_parameters(const EngineConfig& cfg);

/// Fresh engine for a stream with the given id spaces. cfg.dims.d_edge must match the data.
EngineState init_engine(const EngineConfig& cfg, std::size_t num_sources, std::size_t num_destinations);

/// Clears memory, adjacency and the cached index (start of an epoch).
void reset_stream_state(EngineState& state);

/// Uniform destinations in [num_sources, num_sources + num_destinations), never the true
/// destination. Event-major layout: negative j of event i at i * per_event + j.
std::vector<NodeId> sample_negatives(std::span<const Event> batch, std::size_t num_sources,
                                     std::size_t num_destinations, std::size_t per_event, std::mt19937_64& rng);

/// Decoder logits for row pairs: w2 . tanh(w1 [src | dst] + b1) + b2 (n x 1).
ad::Var decode_logits(const BoundParams& p, ad::Var src, ad::Var dst);
/// sigmoid(clamp(logit)) for one pair of embeddings.
double decode_link(const EmbeddingVector& src, const EmbeddingVector& dst, const ParameterStore& params);
double link_probability(double logit);

struct BatchOutcome {
  double loss = 0.0;
  std::vector<double> pos_scores;  // one per event
  std::vector<double> neg_scores;  // event-major, per_event per event
  StalenessReport report;
  std::size_t augmented = 0;
  std::size_t skipped = 0;
};

enum class BatchMode { train, eval };

/// Runs the full per-batch pipeline. In train mode parameters are updated with
/// one Adam step before the memory update.
BatchOutcome process_batch(EngineState& state, std::span<const Event> batch, BatchMode mode,
                           std::mt19937_64& negative_rng);

/// Forward pass only: the batch loss as a function of the bound parameters,
/// with memory, adjacency, staleness and negatives fixed. Used for gradient checks.
ad::Var batch_loss(const BoundParams& p, const EngineState& state, std::span<const Event> batch,
                   std::span<const NodeId> negatives, const StalenessReport& report, const SimilarityIndex* index,
                   std::vector<double>* pos_scores = nullptr, std::vector<double>* neg_scores = nullptr,
                   std::size_t* augmented = nullptr, std::size_t* skipped = nullptr);

/// Similarity index for the current batch, rebuilt per cfg.similarity.rebuild_every.
const SimilarityIndex* prepare_index(EngineState& state, const StalenessReport& report);

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t batches = 0;
  std::size_t stale_nodes = 0;
  std::size_t scored_nodes = 0;  // in-scope nodes with history, summed over batches
  double wall_seconds = 0.0;
  std::vector<double> batch_losses;

  double stale_fraction() const { return scored_nodes ? double(stale_nodes) / double(scored_nodes) : 0.0; }
};

/// One line per epoch: epoch=.. mean_loss=.. stale_fraction=.. wall_seconds=..
std::string format_epoch_line(const EpochStats& s);
/// One line per batch: batch=.. n=.. threshold=.. stale=..
std::string format_staleness_line(std::size_t batch, const StalenessReport& r);

struct TrainHooks {
  std::ostream* staleness_log = nullptr;
};

/// Resets memory/adjacency, then trains over every batch of `train` in order.
EpochStats train_epoch(EngineState& state, const EventStream& train, std::size_t epoch, const TrainHooks& hooks = {});

/// Replays `stream` with frozen parameters, returning per-event positive and negative scores.
struct ReplayScores {
  std::vector<double> pos;
  std::vector<double> neg;  // per_event per event, event-major
  std::size_t per_event = 1;
};
ReplayScores replay(EngineState& state, const EventStream& stream, std::uint64_t negative_seed,
                    const TrainHooks& hooks = {});

}  // namespace stalegraph
