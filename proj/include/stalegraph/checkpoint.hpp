#pragma once

// Single-file checkpoints: "STGN", u32 version, a key=value text block with the
// experiment configuration and scalar engine state, then named little-endian
// float64 arrays (u32 name length, name, u32 rank, u64 dims, payload).

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "stalegraph/experiment.hpp"
#include "stalegraph/model.hpp"

namespace stalegraph {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ExperimentConfig config;
  EngineState state;
};

void save_checkpoint(const ExperimentConfig& config, const EngineState& state, std::ostream& out);
void save_checkpoint(const ExperimentConfig& config, const EngineState& state, const std::filesystem::path& path);

/// Throws CheckpointError ("bad header", version mismatch, or a message naming
/// the truncated or mis-shaped field).
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stalegraph
