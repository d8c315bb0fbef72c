#include "stalegraph/staleness.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stalegraph/errors.hpp"

namespace stalegraph {

void StalenessConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("staleness alpha must lie in (0,1)");
}

std::map<NodeId, double> event_time_deltas(std::span<const Event> batch, const MemoryTable& mem,
                                           const StalenessConfig& cfg) {
  std::map<NodeId, double> first_seen;
  for (const Event& e : batch) {
    first_seen.emplace(e.source, e.timestamp);
    if (cfg.apply_to == StalenessScope::all_endpoints) first_seen.emplace(e.destination, e.timestamp);
  }
  std::map<NodeId, double> out;
  for (const auto& [node, t] : first_seen) {
    if (!mem.is_initialized(node)) continue;
    const double d = t - mem.last_update(node);
    if (d < 0.0)
      throw OrderingError("staleness: node " + std::to_string(node) + " was updated after its batch event");
    out.emplace(node, d);
  }
  return out;
}

double quantile_threshold(std::span<const double> deltas, double p) {
  if (deltas.empty()) throw ThresholdError("quantile_threshold: empty collection");
  if (!(p > 0.0 && p < 1.0)) throw ThresholdError("quantile_threshold: p must lie in (0,1)");
  std::vector<double> sorted(deltas.begin(), deltas.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // The guard absorbs representation error in p (0.7 * 10 must give rank 7, not 8).
  auto rank = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

std::set<NodeId> stale_nodes(const std::map<NodeId, double>& deltas, double threshold) {
  std::set<NodeId> out;
  for (const auto& [node, d] : deltas)
    if (d >= threshold) out.insert(node);
  return out;
}

StalenessReport staleness_report(std::span<const Event> batch, const MemoryTable& mem, const StalenessConfig& cfg) {
  StalenessReport r;
  if (!cfg.enabled) return r;
  r.deltas = event_time_deltas(batch, mem, cfg);
  if (r.deltas.empty()) return r;
  std::vector<double> values;
  values.reserve(r.deltas.size());
  for (const auto& [_, d] : r.deltas) values.push_back(d);
  r.threshold = quantile_threshold(values, cfg.p());
  r.has_threshold = true;
  r.stale_set = stale_nodes(r.deltas, r.threshold);
  return r;
}

}  // namespace stalegraph
