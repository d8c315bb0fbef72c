#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "stalegraph/autodiff.hpp"
#include "stalegraph/matrix.hpp"

namespace stalegraph {

/// Named trainable arrays. Names are unique and shapes fixed after add().
class ParameterStore {
 public:
  ParameterStore() = default;
  explicit ParameterStore(std::uint64_t seed) : seed_(seed) {}

  /// Adds an array. Throws ConfigError on duplicate names.
  Matrix& add(const std::string& name, Matrix value);
  /// Adds a weight initialised uniform(-a, a), a = sqrt(6 / (rows + cols)).
  Matrix& add_glorot(const std::string& name, std::size_t rows, std::size_t cols, std::mt19937_64& rng);

  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  const std::map<std::string, Matrix>& arrays() const { return arrays_; }
  std::map<std::string, Matrix>& arrays() { return arrays_; }
  std::size_t total_size() const;
  std::uint64_t seed() const { return seed_; }

  /// Throws NumericError naming the first array with a non-finite entry.
  void check_finite() const;
  /// name -> L2 norm, for diagnostics.
  std::map<std::string, double> norms() const;

 private:
  std::uint64_t seed_ = 0;
  std::map<std::string, Matrix> arrays_;
};

/// Parameters as tape variables for one forward pass.
class BoundParams {
 public:
  /// Leaves track gradients when `trainable`; otherwise they are constants.
  BoundParams(ad::Tape& tape, const ParameterStore& store, bool trainable);

  ad::Var operator[](const std::string& name) const;
  ad::Tape& tape() const { return *tape_; }
  bool trainable() const { return trainable_; }
  /// name -> gradient after tape.backward().
  std::map<std::string, Matrix> gradients() const;

 private:
  ad::Tape* tape_;
  bool trainable_;
  std::map<std::string, ad::Var> vars_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
};

/// One bias-corrected Adam update. Parameters without a gradient entry are untouched.
void adam_step(ParameterStore& params, const std::map<std::string, Matrix>& grads, AdamState& state,
               const AdamConfig& cfg);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Relative error used by gradient_check: |a - n| / max(|a|, |n|, 1e-6).
double gradient_rel_error(double analytic, double numeric);

/// Builds a scalar loss on the given tape from bound parameters.
using LossBuilder = std::function<ad::Var(ad::Tape&, const BoundParams&)>;

/// Compares reverse-mode gradients with central differences on `probes`
/// coordinates drawn uniformly over all parameter entries (restricted to
/// `only` name prefixes when non-empty).
GradCheckReport gradient_check(ParameterStore& params, const LossBuilder& loss, std::size_t probes,
                               double step, std::uint64_t seed,
                               const std::vector<std::string>& only = {});

}  // namespace stalegraph
