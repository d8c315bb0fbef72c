#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape owns every intermediate value. Ops append a node holding the forward
// value and, when any input requires a gradient, a closure that pushes the
// node's gradient back into its inputs. Node ids only ever reference earlier
// nodes, so the recorded graph is acyclic and backward() is a single reverse
// sweep.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "stalegraph/matrix.hpp"

namespace stalegraph::ad {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// A leaf whose gradient is tracked.
  Var variable(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() target with respect to v (zeros if unused).
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse accumulation from a 1 x 1 loss. Throws UsageError otherwise.
  void backward(Var loss);

  // Op plumbing.
  using Backward = std::function<void(Tape&, std::size_t self)>;
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);
  /// Gradient buffer of node id, allocated on first use.
  Matrix& grad_ref(std::size_t id);
  const Matrix& grad_of_self(std::size_t id) const { return nodes_[id].grad; }
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
/// a + bias, bias 1 x n broadcast over rows.
Var add_row(Var a, Var bias);
/// scale * a + shift, elementwise.
Var affine(Var a, double scale, double shift);
/// Row i multiplied by factors[i].
Var scale_rows(Var a, std::vector<double> factors);
Var sigmoid(Var a);
Var tanh(Var a);
Var cos(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// out row i = a row index[i]; gradients scatter-add back.
Var gather_rows(Var a, std::vector<std::size_t> index);
/// Row-wise sums of consecutive row blocks [offsets[s], offsets[s+1]), summed in order.
Var segment_sum(Var a, std::vector<std::size_t> offsets);
Var softmax_rows(Var a);
/// 1 x 1 sum of all entries.
Var sum(Var a);

/// Multi-head scaled dot-product attention over variable-size key segments.
///
/// Query row b attends over key/value rows [offsets[b], offsets[b+1]).
/// Columns are split evenly into `heads` groups; each head uses
/// softmax(q_h . k_h / sqrt(d_h)) over its segment. An empty segment yields a
/// zero output row. If `weights` is given it receives the attention weights,
/// laid out as weights[key_row * heads + head].
Var segment_attention(Var q, Var k, Var v, std::vector<std::size_t> offsets, std::size_t heads,
                      std::vector<double>* weights = nullptr);

/// Mean binary cross-entropy of sigmoid(clamp(logit, -30, 30)) against labels,
/// probabilities clamped to [1e-12, 1 - 1e-12]. Returns a 1 x 1 value.
Var bce_with_logits(Var logits, std::vector<double> labels);

inline constexpr double kLogitClamp = 30.0;
inline constexpr double kProbClamp = 1e-12;

}  // namespace stalegraph::ad
