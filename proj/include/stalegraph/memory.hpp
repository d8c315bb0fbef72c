#pragma once

// Per-node memory vectors with last-update timestamps, event messages,
// most-recent aggregation and the GRU memory updater.
//
// The table also keeps the messages of the most recent update round. A later
// forward pass can recompute those rows on a tape (refresh_pending) so the
// GRU and time encoder receive gradients; the recomputation reproduces the
// stored rows bit for bit.

#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "stalegraph/ingest.hpp"
#include "stalegraph/matrix.hpp"
#include "stalegraph/params.hpp"
#include "stalegraph/time_encoder.hpp"

namespace stalegraph {

inline constexpr double kNeverUpdated = -std::numeric_limits<double>::infinity();

struct NodeMemory {
  std::span<const double> state;
  double last_update = kNeverUpdated;
};

struct RawMessage {
  NodeId target = 0;
  double timestamp = 0.0;
  std::size_t event_pos = 0;  // position of the source event within its batch
  std::vector<double> self_state;
  std::vector<double> other_state;
  double delta_t = 0.0;
  std::vector<double> edge_features;
  /// concat(self_state, other_state, enc(delta_t), edge_features)
  std::vector<double> payload;

  friend bool operator==(const RawMessage&, const RawMessage&) = default;
};

class MemoryTable {
 public:
  MemoryTable() = default;
  MemoryTable(std::size_t num_nodes, std::size_t dim);

  std::size_t num_nodes() const { return last_update_.size(); }
  std::size_t dim() const { return dim_; }
  NodeMemory get(NodeId n) const { return {state(n), last_update_[n]}; }
  std::span<const double> state(NodeId n) const { return states_.row(n); }
  double last_update(NodeId n) const { return last_update_[n]; }
  bool is_initialized(NodeId n) const { return last_update_[n] > kNeverUpdated; }

  /// Writes one node. Throws OrderingError if t < last_update, NumericError on non-finite state.
  void set(NodeId n, std::span<const double> state, double t);
  /// Messages applied by the latest update round (sorted by target).
  const std::vector<RawMessage>& pending() const { return pending_; }
  void set_pending(std::vector<RawMessage> msgs) { pending_ = std::move(msgs); }
  void reset();

  const Matrix& states() const { return states_; }
  const std::vector<double>& last_updates() const { return last_update_; }
  static MemoryTable restore(Matrix states, std::vector<double> last_update, std::vector<RawMessage> pending);

  friend bool operator==(const MemoryTable&, const MemoryTable&) = default;

 private:
  std::size_t dim_ = 0;
  Matrix states_;
  std::vector<double> last_update_;
  std::vector<RawMessage> pending_;
};

bool is_initialized(const MemoryTable& mem, NodeId node);

/// Messages for the source and destination of one event, built from the current memory.
std::pair<RawMessage, RawMessage> compute_messages(const MemoryTable& mem, const Event& event,
                                                   const TimeEncoder& enc, std::size_t event_pos = 0);

/// Keeps the latest message per target (ties: larger event_pos). Output sorted by target.
std::vector<RawMessage> aggregate_messages(std::span<const RawMessage> messages);

/// Standard GRU cell on row batches. Reads gru.w_ih (in x 3D), gru.w_hh (D x 3D),
/// gru.b_ih, gru.b_hh (1 x 3D); gate blocks ordered reset, update, candidate.
ad::Var gru_cell(const BoundParams& p, ad::Var input, ad::Var hidden);

/// GRU applied to a list of messages, time encoding differentiable. Rows follow `msgs`.
ad::Var gru_from_messages(const BoundParams& p, std::span<const RawMessage> msgs);

/// Applies aggregated messages (one per node) and records them as pending.
void update_memory_batch(MemoryTable& mem, std::span<const RawMessage> msgs, const ParameterStore& params);
/// Single-node update; same arithmetic as the batched form.
void update_memory(MemoryTable& mem, NodeId node, const RawMessage& msg, const ParameterStore& params);

/// Tape rows recomputing the pending updates (same order as mem.pending()).
ad::Var refresh_pending(const BoundParams& p, const MemoryTable& mem);

}  // namespace stalegraph
