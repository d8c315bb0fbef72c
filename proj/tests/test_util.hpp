#pragma once

#include <random>
#include <vector>

#include "stalegraph/experiment.hpp"
#include "stalegraph/matrix.hpp"
#include "stalegraph/model.hpp"

namespace testutil {

using namespace stalegraph;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(r, c);
  for (double& v : m.values()) v = u(rng);
  return m;
}

/// Small engine configuration for fast tests and finite-difference checks.
inline EngineConfig small_engine(std::size_t d_edge, std::uint64_t seed = 1) {
  EngineConfig cfg;
  cfg.dims.d_memory = 6;
  cfg.dims.d_time = 4;
  cfg.dims.d_edge = d_edge;
  cfg.embedding.d_emb = 6;
  cfg.embedding.heads = 2;
  cfg.embedding.neighbors = 3;
  cfg.train.batch_size = 10;
  cfg.train.seed = seed;
  return cfg;
}

inline EventStream small_stream(std::size_t events, std::uint64_t seed = 5, std::size_t communities = 2) {
  SynthConfig s;
  s.num_users = 8;
  s.num_items = 8;
  s.num_communities = communities;
  s.num_events = events;
  s.seed = seed;
  return generate_synthetic(s);
}

/// Replays whole batches without parameter updates.
inline void replay_frozen(EngineState& st, const EventStream& stream, std::size_t batches) {
  std::mt19937_64 rng(99);
  std::size_t b = 0;
  for (auto batch : batch_iter(stream, st.cfg.train.batch_size)) {
    if (b++ == batches) break;
    process_batch(st, batch, BatchMode::eval, rng);
  }
}

}  // namespace testutil
