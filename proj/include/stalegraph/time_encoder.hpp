#pragma once

#include <span>
#include <vector>

#include "stalegraph/params.hpp"

namespace stalegraph {

/// Harmonic time encoding: out_j = cos(frequencies_j * dt + phases_j).
struct TimeEncoder {
  std::vector<double> frequencies;
  std::vector<double> phases;

  std::size_t dim() const { return frequencies.size(); }
  std::vector<double> encode(double delta_t) const;

  /// Reads "time.freq" / "time.phase" from a store.
  static TimeEncoder from(const ParameterStore& params);
};

std::vector<double> time_encode(const TimeEncoder& enc, double delta_t);

/// Frequencies 10^(-4 j / dim), j = 0..dim-1.
std::vector<double> geometric_frequencies(std::size_t dim);

/// Differentiable encoding of a column of time deltas (n x 1) -> n x dim.
ad::Var time_encode(const BoundParams& p, const Matrix& delta_column);

}  // namespace stalegraph
