#include "stalegraph/params.hpp"

#include <algorithm>
#include <cmath>

#include "stalegraph/errors.hpp"

namespace stalegraph {

Matrix& ParameterStore::add(const std::string& name, Matrix value) {
  auto [it, inserted] = arrays_.emplace(name, std::move(value));
  if (!inserted) throw ConfigError("duplicate parameter name: " + name);
  return it->second;
}

Matrix& ParameterStore::add_glorot(const std::string& name, std::size_t rows, std::size_t cols,
                                   std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = dist(rng);
  return add(name, std::move(m));
}

Matrix& ParameterStore::at(const std::string& name) {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Matrix& ParameterStore::at(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, m] : arrays_) n += m.size();
  return n;
}

void ParameterStore::check_finite() const {
  for (const auto& [name, m] : arrays_)
    for (double x : m.values())
      if (!std::isfinite(x)) throw NumericError("non-finite value in parameter " + name);
}

std::map<std::string, double> ParameterStore::norms() const {
  std::map<std::string, double> out;
  for (const auto& [name, m] : arrays_) {
    double s = 0.0;
    for (double x : m.values()) s += x * x;
    out[name] = std::sqrt(s);
  }
  return out;
}

BoundParams::BoundParams(ad::Tape& tape, const ParameterStore& store, bool trainable)
    : tape_(&tape), trainable_(trainable) {
  for (const auto& [name, m] : store.arrays())
    vars_.emplace(name, trainable ? tape.variable(m) : tape.constant(m));
}

ad::Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::map<std::string, Matrix> BoundParams::gradients() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, v] : vars_) out.emplace(name, tape_->grad(v));
  return out;
}

void adam_step(ParameterStore& params, const std::map<std::string, Matrix>& grads, AdamState& state,
               const AdamConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params.arrays()) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    if (!g->second.same_shape(p)) throw ConfigError("adam_step: gradient shape mismatch for " + name);
    Matrix& m = state.m.try_emplace(name, p.rows(), p.cols()).first->second;
    Matrix& v = state.v.try_emplace(name, p.rows(), p.cols()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g->second[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

double gradient_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradient_check(ParameterStore& params, const LossBuilder& loss, std::size_t probes,
                               double step, std::uint64_t seed, const std::vector<std::string>& only) {
  std::map<std::string, Matrix> grads;
  {
    ad::Tape tape;
    BoundParams bound(tape, params, true);
    tape.backward(loss(tape, bound));
    grads = bound.gradients();
  }
  // Same binding as the analytic pass: losses may branch on trainable().
  auto eval = [&] {
    ad::Tape tape;
    BoundParams bound(tape, params, true);
    return loss(tape, bound).value()[0];
  };

  std::vector<std::pair<std::string, std::size_t>> coords;
  for (const auto& [name, m] : params.arrays()) {
    const bool selected =
        only.empty() || std::any_of(only.begin(), only.end(), [&](const std::string& p) {
          return name.rfind(p, 0) == 0;
        });
    if (!selected) continue;
    for (std::size_t i = 0; i < m.size(); ++i) coords.emplace_back(name, i);
  }

  GradCheckReport report;
  if (coords.empty()) return report;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, coords.size() - 1);
  for (std::size_t n = 0; n < probes; ++n) {
    const auto& [name, i] = coords[pick(rng)];
    double& x = params.at(name)[i];
    const double saved = x;
    x = saved + step;
    const double up = eval();
    x = saved - step;
    const double down = eval();
    x = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = grads.at(name)[i];
    const double err = gradient_rel_error(analytic, numeric);
    ++report.probes;
    if (err >= report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_param = name;
      report.worst_index = i;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace stalegraph
