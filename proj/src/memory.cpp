#include "stalegraph/memory.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "stalegraph/errors.hpp"

namespace stalegraph {

MemoryTable::MemoryTable(std::size_t num_nodes, std::size_t dim)
    : dim_(dim), states_(num_nodes, dim), last_update_(num_nodes, kNeverUpdated) {}

void MemoryTable::set(NodeId n, std::span<const double> state, double t) {
  if (state.size() != dim_) throw ConfigError("memory: state width mismatch");
  if (t < last_update_[n])
    throw OrderingError("memory: update of node " + std::to_string(n) + " at t=" + std::to_string(t) +
                        " precedes last update " + std::to_string(last_update_[n]));
  for (double x : state)
    if (!std::isfinite(x)) throw NumericError("memory: non-finite state for node " + std::to_string(n));
  std::copy(state.begin(), state.end(), states_.row(n).begin());
  last_update_[n] = t;
}

void MemoryTable::reset() {
  std::fill(states_.values().begin(), states_.values().end(), 0.0);
  std::fill(last_update_.begin(), last_update_.end(), kNeverUpdated);
  pending_.clear();
}

MemoryTable MemoryTable::restore(Matrix states, std::vector<double> last_update, std::vector<RawMessage> pending) {
  if (states.rows() != last_update.size()) throw CheckpointError("memory: row count mismatch");
  MemoryTable m;
  m.dim_ = states.cols();
  m.states_ = std::move(states);
  m.last_update_ = std::move(last_update);
  m.pending_ = std::move(pending);
  return m;
}

bool is_initialized(const MemoryTable& mem, NodeId node) { return mem.is_initialized(node); }

namespace {

RawMessage make_message(const MemoryTable& mem, NodeId self, NodeId other, const Event& e, const TimeEncoder& enc,
                        std::size_t pos) {
  RawMessage m;
  m.target = self;
  m.timestamp = e.timestamp;
  m.event_pos = pos;
  const auto s = mem.state(self);
  const auto o = mem.state(other);
  m.self_state.assign(s.begin(), s.end());
  m.other_state.assign(o.begin(), o.end());
  m.delta_t = mem.is_initialized(self) ? e.timestamp - mem.last_update(self) : 0.0;
  m.edge_features = e.features;
  const auto te = enc.encode(m.delta_t);
  m.payload.reserve(2 * s.size() + te.size() + e.features.size());
  m.payload.insert(m.payload.end(), s.begin(), s.end());
  m.payload.insert(m.payload.end(), o.begin(), o.end());
  m.payload.insert(m.payload.end(), te.begin(), te.end());
  m.payload.insert(m.payload.end(), e.features.begin(), e.features.end());
  return m;
}

}  // namespace

std::pair<RawMessage, RawMessage> compute_messages(const MemoryTable& mem, const Event& event,
                                                   const TimeEncoder& enc, std::size_t event_pos) {
  if (enc.frequencies.size() != enc.phases.size()) throw ConfigError("compute_messages: time encoder shape mismatch");
  if (event.source >= mem.num_nodes() || event.destination >= mem.num_nodes())
    throw ConfigError("compute_messages: node id outside the memory table");
  for (NodeId n : {event.source, event.destination})
    if (event.timestamp < mem.last_update(n))
      throw OrderingError("compute_messages: event precedes last update of node " + std::to_string(n));
  return {make_message(mem, event.source, event.destination, event, enc, event_pos),
          make_message(mem, event.destination, event.source, event, enc, event_pos)};
}

std::vector<RawMessage> aggregate_messages(std::span<const RawMessage> messages) {
  std::map<NodeId, const RawMessage*> latest;
  for (const RawMessage& m : messages) {
    auto [it, inserted] = latest.emplace(m.target, &m);
    if (inserted) continue;
    const RawMessage& cur = *it->second;
    if (m.timestamp > cur.timestamp || (m.timestamp == cur.timestamp && m.event_pos >= cur.event_pos))
      it->second = &m;
  }
  std::vector<RawMessage> out;
  out.reserve(latest.size());
  for (const auto& [_, m] : latest) out.push_back(*m);
  return out;
}

ad::Var gru_cell(const BoundParams& p, ad::Var input, ad::Var hidden) {
  const std::size_t d = hidden.cols();
  auto gi = ad::add_row(ad::matmul(input, p["gru.w_ih"]), p["gru.b_ih"]);
  auto gh = ad::add_row(ad::matmul(hidden, p["gru.w_hh"]), p["gru.b_hh"]);
  if (gi.cols() != 3 * d) throw ConfigError("gru_cell: weight width must be 3 x hidden");
  auto r = ad::sigmoid(ad::add(ad::slice_cols(gi, 0, d), ad::slice_cols(gh, 0, d)));
  auto z = ad::sigmoid(ad::add(ad::slice_cols(gi, d, 2 * d), ad::slice_cols(gh, d, 2 * d)));
  auto n = ad::tanh(ad::add(ad::slice_cols(gi, 2 * d, 3 * d), ad::mul(r, ad::slice_cols(gh, 2 * d, 3 * d))));
  // h' = (1 - z) * n + z * h
  return ad::add(ad::mul(ad::affine(z, -1.0, 1.0), n), ad::mul(z, hidden));
}

ad::Var gru_from_messages(const BoundParams& p, std::span<const RawMessage> msgs) {
  ad::Tape& t = p.tape();
  const std::size_t n = msgs.size();
  const std::size_t dm = n ? msgs[0].self_state.size() : 0;
  const std::size_t de = n ? msgs[0].edge_features.size() : 0;
  Matrix self(n, dm), other(n, dm), dt(n, 1), edge(n, de);
  for (std::size_t i = 0; i < n; ++i) {
    const RawMessage& m = msgs[i];
    if (m.self_state.size() != dm || m.other_state.size() != dm || m.edge_features.size() != de)
      throw ConfigError("gru_from_messages: inconsistent message widths");
    std::copy(m.self_state.begin(), m.self_state.end(), self.row(i).begin());
    std::copy(m.other_state.begin(), m.other_state.end(), other.row(i).begin());
    std::copy(m.edge_features.begin(), m.edge_features.end(), edge.row(i).begin());
    dt(i, 0) = m.delta_t;
  }
  auto hidden = t.constant(self);
  const ad::Var parts[] = {hidden, t.constant(std::move(other)), time_encode(p, dt), t.constant(std::move(edge))};
  return gru_cell(p, ad::concat_cols(parts), hidden);
}

void update_memory_batch(MemoryTable& mem, std::span<const RawMessage> msgs, const ParameterStore& params) {
  for (const RawMessage& m : msgs) {
    for (double x : m.payload)
      if (!std::isfinite(x)) throw NumericError("update_memory: non-finite payload for node " + std::to_string(m.target));
    if (m.timestamp < mem.last_update(m.target))
      throw OrderingError("update_memory: message precedes last update of node " + std::to_string(m.target));
  }
  if (msgs.empty()) {
    mem.set_pending({});
    return;
  }
  ad::Tape tape;
  BoundParams p(tape, params, false);
  const Matrix& next = gru_from_messages(p, msgs).value();
  for (std::size_t i = 0; i < msgs.size(); ++i) mem.set(msgs[i].target, next.row(i), msgs[i].timestamp);
  mem.set_pending({msgs.begin(), msgs.end()});
}

void update_memory(MemoryTable& mem, NodeId node, const RawMessage& msg, const ParameterStore& params) {
  if (msg.target != node) throw ConfigError("update_memory: message addressed to another node");
  update_memory_batch(mem, std::span<const RawMessage>(&msg, 1), params);
}

ad::Var refresh_pending(const BoundParams& p, const MemoryTable& mem) {
  if (mem.pending().empty()) return p.tape().constant(Matrix(0, mem.dim()));
  return gru_from_messages(p, mem.pending());
}

}  // namespace stalegraph
