#pragma once

// Exact k-nearest-neighbor search over initialized memory vectors.
//
// Two backends answer the same query: a ball tree and a brute-force scan.
// Both compute distances with kernels::squared_distance and order results by
// (distance, node id), so they return identical lists.

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "stalegraph/ingest.hpp"
#include "stalegraph/matrix.hpp"
#include "stalegraph/memory.hpp"

namespace stalegraph {

enum class KnnBackend { ball_tree, brute_force };

struct SimilarityConfig {
  std::size_t k = 1;
  KnnBackend backend = KnnBackend::ball_tree;
  std::size_t leaf_capacity = 16;
  std::size_t rebuild_every = 1;

  void validate() const;
};

/// Initialized nodes and copies of their memory vectors (row i belongs to ids[i]).
struct CandidateSet {
  std::vector<NodeId> ids;
  Matrix points;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  friend bool operator==(const CandidateSet&, const CandidateSet&) = default;
};

struct Neighbor {
  NodeId id = 0;
  double distance = 0.0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

CandidateSet collect_candidates(const MemoryTable& mem);

class BallTree {
 public:
  struct Ball {
    std::vector<double> centroid;
    double radius = 0.0;
    // Children indices into balls(); both -1 for a leaf.
    std::int64_t left = -1;
    std::int64_t right = -1;
    // Leaf point range in order() (empty for inner balls).
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t depth = 0;
    bool is_leaf() const { return left < 0; }
  };

  BallTree() = default;
  BallTree(CandidateSet candidates, std::size_t leaf_capacity);

  /// Candidate rows ordered so each leaf owns a contiguous range.
  const std::vector<std::size_t>& order() const { return order_; }
  const std::vector<Ball>& balls() const { return balls_; }
  const CandidateSet& candidates() const { return candidates_; }
  std::size_t leaf_capacity() const { return leaf_capacity_; }
  std::size_t depth() const;

  std::vector<Neighbor> query(std::span<const double> q, std::size_t k, const std::set<NodeId>& exclude,
                              std::size_t* pruned_balls = nullptr) const;

 private:
  std::size_t build(std::size_t begin, std::size_t end, std::size_t depth);

  CandidateSet candidates_;
  std::size_t leaf_capacity_ = 16;
  std::vector<std::size_t> order_;
  std::vector<Ball> balls_;
};

BallTree build_ball_tree(CandidateSet candidates, const SimilarityConfig& cfg);

/// Exhaustive scan; the reference the ball tree must agree with.
std::vector<Neighbor> brute_force_knn(const CandidateSet& candidates, std::span<const double> q, std::size_t k,
                                      const std::set<NodeId>& exclude);

/// Either backend behind one handle.
class SimilarityIndex {
 public:
  SimilarityIndex() = default;
  SimilarityIndex(CandidateSet candidates, const SimilarityConfig& cfg);

  std::vector<Neighbor> query(std::span<const double> q, std::size_t k, const std::set<NodeId>& exclude) const;
  const CandidateSet& candidates() const;
  bool empty() const { return candidates().empty(); }
  KnnBackend backend() const { return backend_; }

 private:
  KnnBackend backend_ = KnnBackend::brute_force;
  CandidateSet brute_;
  std::optional<BallTree> tree_;
};

std::vector<Neighbor> knn_query(const BallTree& index, std::span<const double> q, std::size_t k,
                                const std::set<NodeId>& exclude);
std::vector<Neighbor> knn_query(const CandidateSet& index, std::span<const double> q, std::size_t k,
                                const std::set<NodeId>& exclude);

}  // namespace stalegraph
