#include "stalegraph/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "stalegraph/errors.hpp"

namespace stalegraph {
namespace {

constexpr char kMagic[4] = {'S', 'T', 'G', 'N'};

template <typename T>
void put(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& field) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw CheckpointError("truncated file while reading field " + field);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

void put_array(std::ostream& out, const std::string& name, const Matrix& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(out, 2);
  put<std::uint64_t>(out, m.rows());
  put<std::uint64_t>(out, m.cols());
  for (double v : m.values()) put<double>(out, v);
}

using ArrayMap = std::map<std::string, Matrix>;

ArrayMap read_arrays(std::istream& in) {
  ArrayMap out;
  const auto count = get<std::uint64_t>(in, "array count");
  for (std::uint64_t a = 0; a < count; ++a) {
    const auto len = get<std::uint32_t>(in, "array name length");
    if (len > 4096) throw CheckpointError("array name length out of range");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw CheckpointError("truncated file while reading field array name");
    const auto rank = get<std::uint32_t>(in, name + " rank");
    if (rank != 2) throw CheckpointError(name + ": unsupported rank " + std::to_string(rank));
    const auto rows = get<std::uint64_t>(in, name + " dims");
    const auto cols = get<std::uint64_t>(in, name + " dims");
    if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) throw CheckpointError(name + ": dims out of range");
    Matrix m(rows, cols);
    for (double& v : m.values()) v = get<double>(in, name);
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

const Matrix& need(const ArrayMap& arrays, const std::string& name, std::size_t rows, std::size_t cols) {
  const auto it = arrays.find(name);
  if (it == arrays.end()) throw CheckpointError("missing field " + name);
  if (it->second.rows() != rows || it->second.cols() != cols)
    throw CheckpointError("shape mismatch in field " + name + ": expected " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", got " + std::to_string(it->second.rows()) + "x" +
                          std::to_string(it->second.cols()));
  return it->second;
}

const Matrix& need_cols(const ArrayMap& arrays, const std::string& name, std::size_t cols) {
  const auto it = arrays.find(name);
  if (it == arrays.end()) throw CheckpointError("missing field " + name);
  return need(arrays, name, it->second.rows(), cols);
}

std::size_t as_index(double v, const std::string& field) {
  if (!(v >= 0.0) || v != std::floor(v)) throw CheckpointError("bad index in field " + field);
  return static_cast<std::size_t>(v);
}

std::vector<double> row_of(const Matrix& m, std::size_t r) {
  const auto s = m.row(r);
  return {s.begin(), s.end()};
}

}  // namespace

void save_checkpoint(const ExperimentConfig& config, const EngineState& state, std::ostream& out) {
  std::ostringstream text;
  text << config.serialize();
  text << "state.d_edge=" << state.cfg.dims.d_edge << '\n';
  text << "state.num_sources=" << state.num_sources << '\n';
  text << "state.num_destinations=" << state.num_destinations << '\n';
  text << "state.batch_counter=" << state.batch_counter << '\n';
  text << "state.index_built_at=" << state.index_built_at << '\n';
  text << "state.has_index=" << (state.index ? 1 : 0) << '\n';
  text << "state.adam_step=" << state.adam.step << '\n';
  text << "state.negative_rng=" << state.negative_rng << '\n';
  const std::string block = text.str();

  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, block.size());
  out.write(block.data(), static_cast<std::streamsize>(block.size()));

  std::vector<std::pair<std::string, Matrix>> arrays;
  for (const auto& [name, m] : state.params.arrays()) arrays.emplace_back("param." + name, m);
  for (const auto& [name, m] : state.adam.m) arrays.emplace_back("adam.m." + name, m);
  for (const auto& [name, m] : state.adam.v) arrays.emplace_back("adam.v." + name, m);

  const MemoryTable& mem = state.memory;
  arrays.emplace_back("memory.states", mem.states());
  arrays.emplace_back("memory.last_update", Matrix(mem.num_nodes(), 1, mem.last_updates()));
  const auto& pending = mem.pending();
  const std::size_t d_edge = state.cfg.dims.d_edge;
  const std::size_t payload = pending.empty() ? 0 : pending.front().payload.size();
  Matrix meta(pending.size(), 4), self(pending.size(), mem.dim()), other(pending.size(), mem.dim()),
      edge(pending.size(), d_edge), pay(pending.size(), payload);
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const RawMessage& m = pending[i];
    meta(i, 0) = static_cast<double>(m.target);
    meta(i, 1) = m.timestamp;
    meta(i, 2) = static_cast<double>(m.event_pos);
    meta(i, 3) = m.delta_t;
    std::copy(m.self_state.begin(), m.self_state.end(), self.row(i).begin());
    std::copy(m.other_state.begin(), m.other_state.end(), other.row(i).begin());
    std::copy(m.edge_features.begin(), m.edge_features.end(), edge.row(i).begin());
    std::copy(m.payload.begin(), m.payload.end(), pay.row(i).begin());
  }
  arrays.emplace_back("memory.pending.meta", std::move(meta));
  arrays.emplace_back("memory.pending.self", std::move(self));
  arrays.emplace_back("memory.pending.other", std::move(other));
  arrays.emplace_back("memory.pending.edge", std::move(edge));
  arrays.emplace_back("memory.pending.payload", std::move(pay));

  const TemporalAdjacency& adj = state.adjacency;
  Matrix offsets(adj.num_nodes() + 1, 1);
  std::size_t total = 0;
  for (std::size_t n = 0; n < adj.num_nodes(); ++n) {
    total += adj.lists()[n].size();
    offsets(n + 1, 0) = static_cast<double>(total);
  }
  Matrix records(total, 3);
  std::size_t r = 0;
  for (const auto& list : adj.lists()) {
    for (const NeighborRecord& rec : list) {
      records(r, 0) = static_cast<double>(rec.neighbor);
      records(r, 1) = static_cast<double>(rec.event_id);
      records(r, 2) = rec.timestamp;
      ++r;
    }
  }
  const auto& table = adj.feature_table();
  Matrix feats(table.size(), d_edge), present(table.size(), 1);
  for (std::size_t i = 0; i < table.size(); ++i) {
    present(i, 0) = adj.feature_present()[i] ? 1.0 : 0.0;
    std::copy(table[i].begin(), table[i].end(), feats.row(i).begin());
  }
  arrays.emplace_back("adjacency.offsets", std::move(offsets));
  arrays.emplace_back("adjacency.records", std::move(records));
  arrays.emplace_back("adjacency.features", std::move(feats));
  arrays.emplace_back("adjacency.present", std::move(present));

  if (state.index) {
    const CandidateSet& c = state.index->candidates();
    Matrix ids(c.size(), 1);
    for (std::size_t i = 0; i < c.size(); ++i) ids(i, 0) = static_cast<double>(c.ids[i]);
    arrays.emplace_back("index.ids", std::move(ids));
    arrays.emplace_back("index.points", c.points);
  }

  put<std::uint64_t>(out, arrays.size());
  for (const auto& [name, m] : arrays) put_array(out, name, m);
  if (!out) throw CheckpointError("write failed");
}

void save_checkpoint(const ExperimentConfig& config, const EngineState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  save_checkpoint(config, state, out);
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("bad header");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("version mismatch: file has " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto block_size = get<std::uint64_t>(in, "config block size");
  if (block_size > (std::uint64_t{1} << 26)) throw CheckpointError("config block size out of range");
  std::string block(block_size, '\0');
  if (!in.read(block.data(), static_cast<std::streamsize>(block_size)))
    throw CheckpointError("truncated file while reading field config block");

  std::map<std::string, std::string> state_keys;
  std::ostringstream config_text;
  {
    std::istringstream lines(block);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.rfind("state.", 0) == 0) {
        const auto eq = line.find('=');
        state_keys[line.substr(0, eq)] = eq == std::string::npos ? "" : line.substr(eq + 1);
      } else {
        config_text << line << '\n';
      }
    }
  }
  Checkpoint ck;
  {
    std::istringstream cin(config_text.str());
    try {
      ck.config = ExperimentConfig::parse(cin);
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("config block: ") + e.what());
    }
  }
  auto scalar = [&](const std::string& key) -> std::uint64_t {
    const auto it = state_keys.find("state." + key);
    if (it == state_keys.end()) throw CheckpointError("missing field state." + key);
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw CheckpointError("bad value in field state." + key);
    }
  };
  ck.config.engine.dims.d_edge = scalar("d_edge");
  try {
    ck.config.finalize();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("config block: ") + e.what());
  }

  EngineState& st = ck.state;
  st = init_engine(ck.config.engine, scalar("num_sources"), scalar("num_destinations"));
  st.batch_counter = scalar("batch_counter");
  st.index_built_at = scalar("index_built_at");
  st.adam.step = scalar("adam_step");
  {
    const auto it = state_keys.find("state.negative_rng");
    if (it == state_keys.end()) throw CheckpointError("missing field state.negative_rng");
    std::istringstream rs(it->second);
    rs >> st.negative_rng;
    if (!rs) throw CheckpointError("bad value in field state.negative_rng");
  }

  const ArrayMap arrays = read_arrays(in);

  for (auto& [name, m] : st.params.arrays()) m = need(arrays, "param." + name, m.rows(), m.cols());
  for (const auto& [name, m] : st.params.arrays()) {
    if (arrays.count("adam.m." + name)) st.adam.m[name] = need(arrays, "adam.m." + name, m.rows(), m.cols());
    if (arrays.count("adam.v." + name)) st.adam.v[name] = need(arrays, "adam.v." + name, m.rows(), m.cols());
  }

  const std::size_t nodes = st.num_sources + st.num_destinations;
  const std::size_t dim = st.cfg.dims.d_memory;
  const std::size_t d_edge = st.cfg.dims.d_edge;
  Matrix states = need(arrays, "memory.states", nodes, dim);
  const Matrix& lu = need(arrays, "memory.last_update", nodes, 1);
  const Matrix& meta = need_cols(arrays, "memory.pending.meta", 4);
  const std::size_t np = meta.rows();
  const Matrix& self = need(arrays, "memory.pending.self", np, dim);
  const Matrix& other = need(arrays, "memory.pending.other", np, dim);
  const Matrix& edge = need(arrays, "memory.pending.edge", np, d_edge);
  const Matrix& pay = need_cols(arrays, "memory.pending.payload", np ? 2 * dim + st.cfg.dims.d_time + d_edge : 0);
  if (pay.rows() != np) throw CheckpointError("shape mismatch in field memory.pending.payload");
  std::vector<RawMessage> pending(np);
  for (std::size_t i = 0; i < np; ++i) {
    RawMessage& m = pending[i];
    m.target = as_index(meta(i, 0), "memory.pending.meta");
    if (m.target >= nodes) throw CheckpointError("bad index in field memory.pending.meta");
    m.timestamp = meta(i, 1);
    m.event_pos = as_index(meta(i, 2), "memory.pending.meta");
    m.delta_t = meta(i, 3);
    m.self_state = row_of(self, i);
    m.other_state = row_of(other, i);
    m.edge_features = row_of(edge, i);
    m.payload = row_of(pay, i);
  }
  st.memory = MemoryTable::restore(std::move(states), lu.values(), std::move(pending));

  const Matrix& offsets = need(arrays, "adjacency.offsets", nodes + 1, 1);
  const Matrix& records = need_cols(arrays, "adjacency.records", 3);
  std::vector<std::vector<NeighborRecord>> lists(nodes);
  for (std::size_t n = 0; n < nodes; ++n) {
    const std::size_t b = as_index(offsets(n, 0), "adjacency.offsets");
    const std::size_t e = as_index(offsets(n + 1, 0), "adjacency.offsets");
    if (b > e || e > records.rows()) throw CheckpointError("bad index in field adjacency.offsets");
    for (std::size_t r = b; r < e; ++r)
      lists[n].push_back({as_index(records(r, 0), "adjacency.records"), as_index(records(r, 1), "adjacency.records"),
                          records(r, 2)});
  }
  const Matrix& feats = need_cols(arrays, "adjacency.features", d_edge);
  const Matrix& present = need(arrays, "adjacency.present", feats.rows(), 1);
  std::vector<std::vector<double>> table(feats.rows());
  std::vector<bool> flags(feats.rows());
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    table[i] = row_of(feats, i);
    flags[i] = present(i, 0) != 0.0;
  }
  st.adjacency = TemporalAdjacency::restore(std::move(lists), std::move(table), std::move(flags), d_edge);

  if (scalar("has_index")) {
    const Matrix& ids = need_cols(arrays, "index.ids", 1);
    const Matrix& points = need(arrays, "index.points", ids.rows(), dim);
    CandidateSet c;
    for (std::size_t i = 0; i < ids.rows(); ++i) c.ids.push_back(as_index(ids(i, 0), "index.ids"));
    c.points = points;
    st.index.emplace(std::move(c), st.cfg.similarity);
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return load_checkpoint(in);
}

}  // namespace stalegraph
