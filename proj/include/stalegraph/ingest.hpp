#pragma once

// Interaction streams: JODIE-format CSV input/output, a community-structured
// synthetic generator, chronological splitting and batching.
//
// Node ids are global: sources (users) occupy [0, num_sources) and
// destinations (items) occupy [num_sources, num_sources + num_destinations).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace stalegraph {

using NodeId = std::size_t;
using EventId = std::size_t;

struct Event {
  EventId id = 0;
  NodeId source = 0;
  NodeId destination = 0;
  double timestamp = 0.0;
  std::vector<double> features;

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
  std::vector<Event> events;
  std::size_t num_sources = 0;
  std::size_t num_destinations = 0;
  std::size_t d_edge = 0;

  std::size_t num_nodes() const { return num_sources + num_destinations; }
  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  /// Throws ValidationError if ids, timestamps, feature widths or node ranges are inconsistent.
  void validate() const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Reads `source,destination,timestamp,state_label,f_1,...,f_De` rows after one
/// header line. The state label is discarded.
EventStream parse_jodie_csv(const std::filesystem::path& path);
EventStream parse_jodie_csv(std::istream& in);

/// Writes the inverse of parse_jodie_csv (state label written as 0).
void write_jodie_csv(const EventStream& stream, const std::filesystem::path& path);
void write_jodie_csv(const EventStream& stream, std::ostream& out);

struct DormancyWindow {
  std::size_t user = 0;  // source-space index
  double start = 0.0;
  double end = 0.0;
};

struct SynthConfig {
  std::size_t num_users = 200;
  std::size_t num_items = 200;
  std::size_t num_communities = 8;
  std::size_t num_events = 20000;
  double intra_prob = 0.9;
  double feature_noise = 0.1;
  std::vector<DormancyWindow> dormancy;
  std::uint64_t seed = 0;
};

/// Users and items are split into equal contiguous community blocks. Each event
/// advances time by an Exp(1) gap, draws an active user uniformly, then an item
/// from the user's community with probability intra_prob (otherwise uniformly
/// from the other communities). Features are the item community one-hot plus
/// Gaussian noise.
EventStream generate_synthetic(const SynthConfig& cfg);

/// Community index of a global node id in a stream built by generate_synthetic.
std::size_t synthetic_community(const SynthConfig& cfg, NodeId node);

/// Picks `fraction` of users and gives each a dormancy window of relative
/// length `length_frac` placed uniformly inside the expected time horizon.
std::vector<DormancyWindow> random_dormancy(const SynthConfig& cfg, double fraction, double length_frac,
                                            std::uint64_t seed);

struct SplitSpec {
  double train_frac = 0.70;
  double val_frac = 0.15;
  double new_node_frac = 0.10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitResult {
  EventStream train;
  EventStream val;
  EventStream test;
  /// new_nodes[id] is true for nodes withheld from training.
  std::vector<bool> new_nodes;
  double val_start_time = 0.0;   // train holds timestamps <= this
  double test_start_time = 0.0;  // test holds timestamps > this

  bool is_new(NodeId n) const { return n < new_nodes.size() && new_nodes[n]; }
  /// Event positions in `split` touching (inductive) or avoiding (transductive) new nodes.
  std::vector<std::size_t> inductive(const EventStream& split) const;
  std::vector<std::size_t> transductive(const EventStream& split) const;
};

/// Linear-interpolated quantile of a sorted sample.
double interpolated_quantile(std::span<const double> sorted, double q);

/// Timestamp-quantile split. Events keep their original ids.
SplitResult chronological_split(const EventStream& stream, const SplitSpec& spec);

/// Consecutive chronological chunks of at most batch_size events.
std::vector<std::span<const Event>> batch_iter(const EventStream& stream, std::size_t batch_size);

}  // namespace stalegraph
