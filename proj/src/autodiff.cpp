#include "stalegraph/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "stalegraph/errors.hpp"
#include "stalegraph/kernels.hpp"

namespace stalegraph::ad {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool track = false;
  for (const Var& in : inputs) {
    assert(in.tape == this);
    track = track || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, track ? std::move(backward) : Backward{}, track});
  return Var{this, nodes_.size() - 1};
}

Matrix& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value))
    n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.same_shape(n.value) && n.grad.size() == n.value.size()) return n.grad;
  return Matrix(n.value.rows(), n.value.cols());
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("backward: loss recorded on another tape");
  const Matrix& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1)
    throw UsageError("backward: loss must be 1x1, got " + std::to_string(lv.rows()) + "x" +
                     std::to_string(lv.cols()));
  for (Node& n : nodes_) n.grad = Matrix();
  grad_ref(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

namespace {

void check_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ConfigError(std::string(op) + ": shape mismatch");
}

template <typename F>
Matrix map(const Matrix& x, F f) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw ConfigError("matmul: inner dimensions " + std::to_string(av.cols()) + " vs " +
                      std::to_string(bv.rows()));
  Matrix out(av.rows(), bv.cols());
  kernels::gemm(kernels::pick(av.rows() * av.cols() * bv.cols()), av, bv, out);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (t.needs(a.id))
      kernels::gemm_nt(kernels::pick(g.size() * bv.rows()), g, bv, t.grad_ref(a.id));
    if (t.needs(b.id))
      kernels::gemm_tn(kernels::pick(av.size() * g.cols()), av, g, t.grad_ref(b.id));
  });
}

Var add(Var a, Var b) {
  check_same(a, b, "add");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    for (Var in : {a, b}) {
      if (!t.needs(in.id)) continue;
      Matrix& gi = t.grad_ref(in.id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  check_same(a, b, "sub");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    if (t.needs(a.id)) {
      Matrix& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs(b.id)) {
      Matrix& gb = t.grad_ref(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  check_same(a, b, "mul");
  Matrix out = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    if (t.needs(a.id)) {
      const Matrix& bv = t.value(b);
      Matrix& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs(b.id)) {
      const Matrix& av = t.value(a);
      Matrix& gb = t.grad_ref(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_row(Var a, Var bias) {
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != a.cols()) throw ConfigError("add_row: bias shape mismatch");
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return a.tape->record(std::move(out), {a, bias}, [a, bias](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    if (t.needs(a.id)) {
      Matrix& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs(bias.id)) {
      Matrix& gb = t.grad_ref(bias.id);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
      }
    }
  });
}

Var affine(Var a, double scale, double shift) {
  Matrix out = map(a.value(), [&](double x) { return scale * x + shift; });
  return a.tape->record(std::move(out), {a}, [a, scale](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
  });
}

Var scale_rows(Var a, std::vector<double> factors) {
  if (factors.size() != a.rows()) throw ConfigError("scale_rows: factor count mismatch");
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (double& x : out.row(r)) x *= factors[r];
  return a.tape->record(std::move(out), {a},
                        [a, f = std::move(factors)](Tape& t, std::size_t self) {
                          const Matrix& g = t.grad_of_self(self);
                          Matrix& ga = t.grad_ref(a.id);
                          for (std::size_t r = 0; r < g.rows(); ++r)
                            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += f[r] * g(r, c);
                        });
}

Var sigmoid(Var a) {
  Matrix out = map(a.value(), [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    const Matrix& y = t.value(Var{&t, self});
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var a) {
  Matrix out = map(a.value(), [](double x) { return std::tanh(x); });
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    const Matrix& y = t.value(Var{&t, self});
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var cos(Var a) {
  Matrix out = map(a.value(), [](double x) { return std::cos(x); });
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    const Matrix& x = t.value(a);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i] * std::sin(x[i]);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ConfigError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + off);
    off += pv.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), parts, [ins](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    std::size_t off = 0;
    for (const Var& p : ins) {
      const std::size_t w = t.value(p).cols();
      if (t.needs(p.id)) {
        Matrix& gp = t.grad_ref(p.id);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, off + c);
      }
      off += w;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ConfigError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) {
    const auto& v = p.value().values();
    data.insert(data.end(), v.begin(), v.end());
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->record(Matrix(rows, cols, std::move(data)), parts,
                               [ins](Tape& t, std::size_t self) {
                                 const Matrix& g = t.grad_of_self(self);
                                 std::size_t off = 0;
                                 for (const Var& p : ins) {
                                   const std::size_t n = t.value(p).size();
                                   if (t.needs(p.id)) {
                                     Matrix& gp = t.grad_ref(p.id);
                                     for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
                                   }
                                   off += n;
                                 }
                               });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw ConfigError("slice_cols: range out of bounds");
  const Matrix& av = a.value();
  Matrix out(av.rows(), end - begin);
  for (std::size_t r = 0; r < av.rows(); ++r)
    std::copy(av.row(r).begin() + begin, av.row(r).begin() + end, out.row(r).begin());
  return a.tape->record(std::move(out), {a}, [a, begin](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
  });
}

Var gather_rows(Var a, std::vector<std::size_t> index) {
  const Matrix& av = a.value();
  Matrix out(index.size(), av.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= av.rows()) throw ConfigError("gather_rows: index out of range");
    std::copy(av.row(index[i]).begin(), av.row(index[i]).end(), out.row(i).begin());
  }
  return a.tape->record(std::move(out), {a}, [a, idx = std::move(index)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(idx[i], c) += g(i, c);
  });
}

Var segment_sum(Var a, std::vector<std::size_t> offsets) {
  if (offsets.empty() || offsets.back() != a.rows())
    throw ConfigError("segment_sum: offsets must end at the row count");
  const Matrix& av = a.value();
  const std::size_t segs = offsets.size() - 1;
  Matrix out(segs, av.cols());
  for (std::size_t s = 0; s < segs; ++s) {
    if (offsets[s] > offsets[s + 1]) throw ConfigError("segment_sum: offsets must be sorted");
    if (offsets[s] == offsets[s + 1]) continue;
    auto dst = out.row(s);
    std::copy(av.row(offsets[s]).begin(), av.row(offsets[s]).end(), dst.begin());
    for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r) {
      auto src = av.row(r);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  }
  return a.tape->record(std::move(out), {a}, [a, off = std::move(offsets)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t s = 0; s + 1 < off.size(); ++s)
      for (std::size_t r = off[s]; r < off[s + 1]; ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(s, c);
  });
}

Var softmax_rows(Var a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto x = av.row(r);
    auto y = out.row(r);
    if (x.empty()) continue;
    const double mx = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) z += (y[c] = std::exp(x[c] - mx));
    for (double& v : y) v /= z;
  }
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of_self(self);
    const Matrix& y = t.value(Var{&t, self});
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return a.tape->record(Matrix(1, 1, s), {a}, [a](Tape& t, std::size_t self) {
    const double g = t.grad_of_self(self)[0];
    Matrix& ga = t.grad_ref(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var segment_attention(Var q, Var k, Var v, std::vector<std::size_t> offsets, std::size_t heads,
                      std::vector<double>* weights) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  const std::size_t d = qv.cols();
  if (heads == 0 || d % heads != 0) throw ConfigError("segment_attention: width not divisible by heads");
  if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows())
    throw ConfigError("segment_attention: key/value shape mismatch");
  if (offsets.size() != qv.rows() + 1 || offsets.front() != 0 || offsets.back() != kv.rows())
    throw ConfigError("segment_attention: offsets do not cover the key rows");
  for (std::size_t b = 0; b + 1 < offsets.size(); ++b)
    if (offsets[b] > offsets[b + 1]) throw ConfigError("segment_attention: offsets must be sorted");

  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto w = std::make_shared<std::vector<double>>(kv.rows() * heads, 0.0);
  Matrix out(qv.rows(), d);
  const auto nq = static_cast<std::ptrdiff_t>(qv.rows());

#pragma omp parallel for schedule(dynamic, 16) if (kv.rows() * d > kernels::kParallelThreshold)
  for (std::ptrdiff_t bi = 0; bi < nq; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    const std::size_t lo = offsets[b], hi = offsets[b + 1];
    if (lo == hi) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = lo; j < hi; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qv(b, c0 + c) * kv(j, c0 + c);
        s *= inv_sqrt;
        (*w)[j * heads + h] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = lo; j < hi; ++j) z += ((*w)[j * heads + h] = std::exp((*w)[j * heads + h] - mx));
      for (std::size_t j = lo; j < hi; ++j) (*w)[j * heads + h] /= z;
      for (std::size_t j = lo; j < hi; ++j) {
        const double wj = (*w)[j * heads + h];
        for (std::size_t c = 0; c < dh; ++c) out(b, c0 + c) += wj * vv(j, c0 + c);
      }
    }
  }
  if (weights) *weights = *w;

  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, w, off = std::move(offsets), heads, dh, inv_sqrt](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_of_self(self);
        const Matrix& qv = t.value(q);
        const Matrix& kv = t.value(k);
        const Matrix& vv = t.value(v);
        Matrix* gq = t.needs(q.id) ? &t.grad_ref(q.id) : nullptr;
        Matrix* gk = t.needs(k.id) ? &t.grad_ref(k.id) : nullptr;
        Matrix* gv = t.needs(v.id) ? &t.grad_ref(v.id) : nullptr;
        const auto nq = static_cast<std::ptrdiff_t>(qv.rows());
        // Segments are disjoint, so each key row is written by exactly one query.
#pragma omp parallel for schedule(dynamic, 16) if (kv.rows() * qv.cols() > kernels::kParallelThreshold)
        for (std::ptrdiff_t bi = 0; bi < nq; ++bi) {
          const auto b = static_cast<std::size_t>(bi);
          const std::size_t lo = off[b], hi = off[b + 1];
          if (lo == hi) continue;
          std::vector<double> dw(hi - lo);
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            double wdw = 0.0;
            for (std::size_t j = lo; j < hi; ++j) {
              const double wj = (*w)[j * heads + h];
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) {
                s += g(b, c0 + c) * vv(j, c0 + c);
                if (gv) (*gv)(j, c0 + c) += wj * g(b, c0 + c);
              }
              dw[j - lo] = s;
              wdw += wj * s;
            }
            for (std::size_t j = lo; j < hi; ++j) {
              const double ds = (*w)[j * heads + h] * (dw[j - lo] - wdw) * inv_sqrt;
              for (std::size_t c = 0; c < dh; ++c) {
                if (gq) (*gq)(b, c0 + c) += ds * kv(j, c0 + c);
                if (gk) (*gk)(j, c0 + c) += ds * qv(b, c0 + c);
              }
            }
          }
        }
      });
}

Var bce_with_logits(Var logits, std::vector<double> labels) {
  const Matrix& x = logits.value();
  if (x.cols() != 1 || x.rows() != labels.size() || labels.empty())
    throw ConfigError("bce_with_logits: expects an n x 1 logit column matching the labels");
  const std::size_t n = labels.size();
  std::vector<double> dx(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = std::clamp(x[i], -kLogitClamp, kLogitClamp);
    const double p = 1.0 / (1.0 + std::exp(-z));
    const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    const double y = labels[i];
    total += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
    const bool flat = std::abs(x[i]) >= kLogitClamp || pc != p;
    dx[i] = flat ? 0.0 : (p - y) / static_cast<double>(n);
  }
  if (!std::isfinite(total)) throw NumericError("bce_with_logits: non-finite loss");
  return logits.tape->record(Matrix(1, 1, total / static_cast<double>(n)), {logits},
                             [logits, dx = std::move(dx)](Tape& t, std::size_t self) {
                               const double g = t.grad_of_self(self)[0];
                               Matrix& gl = t.grad_ref(logits.id);
                               for (std::size_t i = 0; i < dx.size(); ++i) gl[i] += g * dx[i];
                             });
}

}  // namespace stalegraph::ad
