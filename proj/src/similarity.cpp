#include "stalegraph/similarity.hpp"

#include <algorithm>
#include <cmath>

#include "stalegraph/errors.hpp"
#include "stalegraph/kernels.hpp"

namespace stalegraph {
namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(kernels::squared_distance(a, b));
}

/// Sorted bounded list of the best k neighbors seen so far.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}
  void offer(const Neighbor& n) {
    if (items_.size() == k_ && !closer(n, items_.back())) return;
    items_.insert(std::upper_bound(items_.begin(), items_.end(), n, closer), n);
    if (items_.size() > k_) items_.pop_back();
  }
  bool full() const { return items_.size() == k_; }
  double worst() const { return items_.back().distance; }
  std::vector<Neighbor> take() { return std::move(items_); }

 private:
  std::size_t k_;
  std::vector<Neighbor> items_;
};

}  // namespace

void SimilarityConfig::validate() const {
  if (k < 1) throw ConfigError("similarity k must be >= 1");
  if (leaf_capacity < 1) throw ConfigError("leaf_capacity must be >= 1");
  if (rebuild_every < 1) throw ConfigError("rebuild_every must be >= 1");
}

CandidateSet collect_candidates(const MemoryTable& mem) {
  CandidateSet c;
  for (NodeId n = 0; n < mem.num_nodes(); ++n)
    if (mem.is_initialized(n)) c.ids.push_back(n);
  c.points = Matrix(c.ids.size(), mem.dim());
  for (std::size_t i = 0; i < c.ids.size(); ++i) {
    const auto s = mem.state(c.ids[i]);
    std::copy(s.begin(), s.end(), c.points.row(i).begin());
  }
  return c;
}

BallTree::BallTree(CandidateSet candidates, std::size_t leaf_capacity)
    : candidates_(std::move(candidates)), leaf_capacity_(std::max<std::size_t>(1, leaf_capacity)) {
  order_.resize(candidates_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!order_.empty()) build(0, order_.size(), 0);
}

std::size_t BallTree::build(std::size_t begin, std::size_t end, std::size_t depth) {
  const Matrix& pts = candidates_.points;
  const std::size_t dim = pts.cols();
  const std::size_t self = balls_.size();
  balls_.push_back({});

  Ball ball;
  ball.depth = depth;
  ball.centroid.assign(dim, 0.0);
  for (std::size_t i = begin; i < end; ++i) {
    const auto p = pts.row(order_[i]);
    for (std::size_t d = 0; d < dim; ++d) ball.centroid[d] += p[d];
  }
  for (double& c : ball.centroid) c /= static_cast<double>(end - begin);

  std::size_t pole_a = order_[begin];
  double far = -1.0;
  for (std::size_t i = begin; i < end; ++i) {
    const double r = distance(pts.row(order_[i]), ball.centroid);
    ball.radius = std::max(ball.radius, r);
    if (r > far) {
      far = r;
      pole_a = order_[i];
    }
  }

  auto make_leaf = [&] {
    ball.begin = begin;
    ball.end = end;
    balls_[self] = std::move(ball);
    return self;
  };
  if (end - begin <= leaf_capacity_) return make_leaf();

  std::size_t pole_b = pole_a;
  far = -1.0;
  for (std::size_t i = begin; i < end; ++i) {
    const double r = distance(pts.row(order_[i]), pts.row(pole_a));
    if (r > far) {
      far = r;
      pole_b = order_[i];
    }
  }
  const auto a = pts.row(pole_a);
  const auto b = pts.row(pole_b);
  const auto mid = std::stable_partition(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                                         order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t i) {
                                           return kernels::squared_distance(pts.row(i), a) <=
                                                  kernels::squared_distance(pts.row(i), b);
                                         });
  const auto split = static_cast<std::size_t>(mid - order_.begin());
  // All points coincide with pole A: nothing left to separate.
  if (split == begin || split == end) return make_leaf();

  const std::size_t left = build(begin, split, depth + 1);
  const std::size_t right = build(split, end, depth + 1);
  ball.left = static_cast<std::int64_t>(left);
  ball.right = static_cast<std::int64_t>(right);
  balls_[self] = std::move(ball);
  return self;
}

std::size_t BallTree::depth() const {
  std::size_t d = 0;
  for (const Ball& b : balls_) d = std::max(d, b.depth);
  return d;
}

std::vector<Neighbor> BallTree::query(std::span<const double> q, std::size_t k, const std::set<NodeId>& exclude,
                                      std::size_t* pruned_balls) const {
  if (k == 0 || balls_.empty()) return {};
  if (q.size() != candidates_.points.cols()) throw ConfigError("knn_query: query dimension mismatch");
  TopK best(k);
  std::size_t pruned = 0;
  // Slack keeps rounding in (d - r) from pruning a ball holding an exact tie.
  auto prunable = [&](double lower) {
    return best.full() && lower > best.worst() * (1.0 + 1e-9) + 1e-12;
  };
  std::vector<std::pair<std::size_t, double>> stack{{0, distance(q, balls_[0].centroid) - balls_[0].radius}};
  while (!stack.empty()) {
    const auto [idx, lower] = stack.back();
    stack.pop_back();
    if (prunable(lower)) {
      ++pruned;
      continue;
    }
    const Ball& ball = balls_[idx];
    if (ball.is_leaf()) {
      for (std::size_t i = ball.begin; i < ball.end; ++i) {
        const std::size_t row = order_[i];
        const NodeId id = candidates_.ids[row];
        if (exclude.count(id)) continue;
        best.offer({id, distance(q, candidates_.points.row(row))});
      }
      continue;
    }
    const auto l = static_cast<std::size_t>(ball.left);
    const auto r = static_cast<std::size_t>(ball.right);
    const double ll = distance(q, balls_[l].centroid) - balls_[l].radius;
    const double rl = distance(q, balls_[r].centroid) - balls_[r].radius;
    // Push the farther child first so the nearer one is explored first.
    if (ll <= rl) {
      stack.emplace_back(r, rl);
      stack.emplace_back(l, ll);
    } else {
      stack.emplace_back(l, ll);
      stack.emplace_back(r, rl);
    }
  }
  if (pruned_balls) *pruned_balls = pruned;
  return best.take();
}

BallTree build_ball_tree(CandidateSet candidates, const SimilarityConfig& cfg) {
  return BallTree(std::move(candidates), cfg.leaf_capacity);
}

std::vector<Neighbor> brute_force_knn(const CandidateSet& candidates, std::span<const double> q, std::size_t k,
                                      const std::set<NodeId>& exclude) {
  if (k == 0 || candidates.empty()) return {};
  if (q.size() != candidates.points.cols()) throw ConfigError("knn_query: query dimension mismatch");
  std::vector<double> sq(candidates.size());
  kernels::squared_distances(kernels::pick(candidates.points.size()), q, candidates.points, sq);
  std::vector<Neighbor> all;
  all.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (!exclude.count(candidates.ids[i])) all.push_back({candidates.ids[i], std::sqrt(sq[i])});
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), closer);
  all.resize(take);
  return all;
}

SimilarityIndex::SimilarityIndex(CandidateSet candidates, const SimilarityConfig& cfg) : backend_(cfg.backend) {
  if (backend_ == KnnBackend::ball_tree)
    tree_.emplace(std::move(candidates), cfg.leaf_capacity);
  else
    brute_ = std::move(candidates);
}

std::vector<Neighbor> SimilarityIndex::query(std::span<const double> q, std::size_t k,
                                             const std::set<NodeId>& exclude) const {
  return tree_ ? tree_->query(q, k, exclude) : brute_force_knn(brute_, q, k, exclude);
}

const CandidateSet& SimilarityIndex::candidates() const { return tree_ ? tree_->candidates() : brute_; }

std::vector<Neighbor> knn_query(const BallTree& index, std::span<const double> q, std::size_t k,
                                const std::set<NodeId>& exclude) {
  return index.query(q, k, exclude);
}

std::vector<Neighbor> knn_query(const CandidateSet& index, std::span<const double> q, std::size_t k,
                                const std::set<NodeId>& exclude) {
  return brute_force_knn(index, q, k, exclude);
}

}  // namespace stalegraph
