#pragma once

#include <span>
#include <vector>

#include "stalegraph/ingest.hpp"

namespace stalegraph {

struct NeighborRecord {
  NodeId neighbor = 0;
  EventId event_id = 0;
  double timestamp = 0.0;

  friend bool operator==(const NeighborRecord&, const NeighborRecord&) = default;
};

/// Per-node interaction history, both directions of each event, sorted by
/// (timestamp, event_id). Also keeps the edge features of every inserted event
/// so attention can read them back by event id.
class TemporalAdjacency {
 public:
  TemporalAdjacency() = default;
  TemporalAdjacency(std::size_t num_nodes, std::size_t d_edge) : lists_(num_nodes), d_edge_(d_edge) {}

  /// Throws OrderingError if the event precedes either endpoint's latest record.
  void insert(const Event& event);

  /// The n most recent records strictly before t, most recent last.
  std::span<const NeighborRecord> last_n(NodeId node, double t, std::size_t n) const;

  std::span<const NeighborRecord> history(NodeId node) const;
  std::span<const double> edge_features(EventId id) const;
  std::size_t num_nodes() const { return lists_.size(); }
  std::size_t d_edge() const { return d_edge_; }
  void clear();

  // Snapshot access for checkpoints.
  const std::vector<std::vector<NeighborRecord>>& lists() const { return lists_; }
  const std::vector<std::vector<double>>& feature_table() const { return features_; }
  const std::vector<bool>& feature_present() const { return present_; }
  static TemporalAdjacency restore(std::vector<std::vector<NeighborRecord>> lists,
                                   std::vector<std::vector<double>> features, std::vector<bool> present,
                                   std::size_t d_edge);

  friend bool operator==(const TemporalAdjacency&, const TemporalAdjacency&) = default;

 private:
  std::vector<std::vector<NeighborRecord>> lists_;
  std::vector<std::vector<double>> features_;
  std::vector<bool> present_;
  std::size_t d_edge_ = 0;
};

/// Free-function form of TemporalAdjacency::insert.
void insert_interaction(TemporalAdjacency& adj, const Event& event);
std::vector<NeighborRecord> last_n_neighbors(const TemporalAdjacency& adj, NodeId node, double t, std::size_t n);

}  // namespace stalegraph
