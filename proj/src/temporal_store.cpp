#include "stalegraph/temporal_store.hpp"

#include <algorithm>
#include <string>

#include "stalegraph/errors.hpp"

namespace stalegraph {
namespace {

bool before(const NeighborRecord& a, double t, EventId id) {
  return a.timestamp < t || (a.timestamp == t && a.event_id < id);
}

}  // namespace

void TemporalAdjacency::insert(const Event& event) {
  const NodeId ends[2] = {event.source, event.destination};
  for (NodeId n : ends) {
    if (n >= lists_.size()) throw OrderingError("insert: node " + std::to_string(n) + " out of range");
    if (!lists_[n].empty() && !before(lists_[n].back(), event.timestamp, event.id))
      throw OrderingError("insert: event " + std::to_string(event.id) + " at t=" + std::to_string(event.timestamp) +
                          " precedes the latest record of node " + std::to_string(n));
  }
  if (event.features.size() != d_edge_) throw ConfigError("insert: edge feature width mismatch");
  lists_[event.source].push_back({event.destination, event.id, event.timestamp});
  lists_[event.destination].push_back({event.source, event.id, event.timestamp});
  if (event.id >= features_.size()) {
    features_.resize(event.id + 1);
    present_.resize(event.id + 1, false);
  }
  features_[event.id] = event.features;
  present_[event.id] = true;
}

std::span<const NeighborRecord> TemporalAdjacency::last_n(NodeId node, double t, std::size_t n) const {
  if (node >= lists_.size()) return {};
  const auto& list = lists_[node];
  const auto end = std::lower_bound(list.begin(), list.end(), t,
                                    [](const NeighborRecord& r, double v) { return r.timestamp < v; });
  const auto count = static_cast<std::size_t>(end - list.begin());
  const std::size_t take = std::min(n, count);
  return {list.data() + (count - take), take};
}

std::span<const NeighborRecord> TemporalAdjacency::history(NodeId node) const {
  if (node >= lists_.size()) return {};
  return lists_[node];
}

std::span<const double> TemporalAdjacency::edge_features(EventId id) const {
  if (id >= present_.size() || !present_[id]) throw ConfigError("edge features of unknown event " + std::to_string(id));
  return features_[id];
}

void TemporalAdjacency::clear() {
  for (auto& l : lists_) l.clear();
  features_.clear();
  present_.clear();
}

TemporalAdjacency TemporalAdjacency::restore(std::vector<std::vector<NeighborRecord>> lists,
                                             std::vector<std::vector<double>> features, std::vector<bool> present,
                                             std::size_t d_edge) {
  TemporalAdjacency a;
  a.lists_ = std::move(lists);
  a.features_ = std::move(features);
  a.present_ = std::move(present);
  a.d_edge_ = d_edge;
  return a;
}

void insert_interaction(TemporalAdjacency& adj, const Event& event) { adj.insert(event); }

std::vector<NeighborRecord> last_n_neighbors(const TemporalAdjacency& adj, NodeId node, double t, std::size_t n) {
  if (n == 0) throw ConfigError("last_n_neighbors: n must be >= 1");
  const auto s = adj.last_n(node, t, n);
  return {s.begin(), s.end()};
}

}  // namespace stalegraph
