#pragma once

// Batch-relative staleness: each in-scope node's gap since its last memory
// update, the empirical p-quantile of those gaps, and the nodes at or above it.

#include <map>
#include <set>
#include <span>
#include <vector>

#include "stalegraph/ingest.hpp"
#include "stalegraph/memory.hpp"

namespace stalegraph {

enum class StalenessScope { sources_only, all_endpoints };

struct StalenessConfig {
  double alpha = 0.025;
  StalenessScope apply_to = StalenessScope::sources_only;
  bool enabled = true;

  double p() const { return 1.0 - alpha; }
  void validate() const;
};

struct StalenessReport {
  std::map<NodeId, double> deltas;
  double threshold = 0.0;
  std::set<NodeId> stale_set;
  /// False when no in-scope node had history, so no threshold exists.
  bool has_threshold = false;
};

/// node -> (first event time in batch) - last_update, for in-scope nodes with history.
/// Throws OrderingError when memory is ahead of the batch.
std::map<NodeId, double> event_time_deltas(std::span<const Event> batch, const MemoryTable& mem,
                                           const StalenessConfig& cfg);

/// Order statistic of rank ceil(p * n) (1-based): the smallest t with F(t) >= p.
/// Throws ThresholdError on empty input or p outside (0,1).
double quantile_threshold(std::span<const double> deltas, double p);

/// { i : deltas[i] >= threshold }
std::set<NodeId> stale_nodes(const std::map<NodeId, double>& deltas, double threshold);

/// Full per-batch report; an empty report when disabled or no node has history.
StalenessReport staleness_report(std::span<const Event> batch, const MemoryTable& mem, const StalenessConfig& cfg);

}  // namespace stalegraph
