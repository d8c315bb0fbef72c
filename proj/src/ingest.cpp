#include "stalegraph/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <string_view>

#include "stalegraph/errors.hpp"

namespace stalegraph {
namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
  field = trim(field);
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty())
    throw ParseError(line, std::string("non-numeric ") + what + " field '" + std::string(field) + "'");
  return value;
}

void append_double(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

}  // namespace

void EventStream::validate() const {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    const std::size_t line = i + 2;
    if (i > 0 && e.id <= events[i - 1].id) throw ValidationError(line, "event ids must strictly increase");
    if (i > 0 && e.timestamp < events[i - 1].timestamp)
      throw ValidationError(line, "timestamps must be non-decreasing");
    if (!(e.timestamp >= 0.0) || !std::isfinite(e.timestamp))
      throw ValidationError(line, "timestamp must be a non-negative finite number");
    if (e.features.size() != d_edge) throw ValidationError(line, "feature width differs from d_edge");
    if (e.source >= num_sources) throw ValidationError(line, "source id out of range");
    if (e.destination < num_sources || e.destination >= num_nodes())
      throw ValidationError(line, "destination id out of range");
  }
}

EventStream parse_jodie_csv(std::istream& in) {
  struct Row {
    std::size_t src, dst;
    double t;
    std::vector<double> f;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool have_width = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) continue;  // header
    std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_commas(view);
    if (fields.size() < 4)
      throw ParseError(line_no, "expected at least 4 columns, got " + std::to_string(fields.size()));
    if (!have_width) {
      width = fields.size();
      have_width = true;
    } else if (fields.size() != width) {
      throw ParseError(line_no, "expected " + std::to_string(width) + " columns, got " +
                                    std::to_string(fields.size()));
    }
    Row r;
    r.src = parse_number<std::size_t>(fields[0], line_no, "source");
    r.dst = parse_number<std::size_t>(fields[1], line_no, "destination");
    r.t = parse_number<double>(fields[2], line_no, "timestamp");
    parse_number<double>(fields[3], line_no, "state_label");
    r.f.reserve(fields.size() - 4);
    for (std::size_t c = 4; c < fields.size(); ++c)
      r.f.push_back(parse_number<double>(fields[c], line_no, "feature"));
    if (!rows.empty() && r.t < rows.back().t)
      throw ValidationError(line_no, "timestamp decreases (" + std::to_string(r.t) + " after " +
                                         std::to_string(rows.back().t) + ")");
    if (!(r.t >= 0.0) || !std::isfinite(r.t)) throw ValidationError(line_no, "negative or non-finite timestamp");
    rows.push_back(std::move(r));
  }

  EventStream s;
  s.d_edge = have_width ? width - 4 : 0;
  for (const Row& r : rows) {
    s.num_sources = std::max(s.num_sources, r.src + 1);
    s.num_destinations = std::max(s.num_destinations, r.dst + 1);
  }
  s.events.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    s.events.push_back(Event{i, rows[i].src, s.num_sources + rows[i].dst, rows[i].t, std::move(rows[i].f)});
  return s;
}

EventStream parse_jodie_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_jodie_csv(in);
}

void write_jodie_csv(const EventStream& stream, std::ostream& out) {
  out << "user_id,item_id,timestamp,state_label,comma_separated_list_of_features\n";
  std::string line;
  for (const Event& e : stream.events) {
    line.clear();
    line += std::to_string(e.source);
    line += ',';
    line += std::to_string(e.destination - stream.num_sources);
    line += ',';
    append_double(line, e.timestamp);
    line += ",0";
    for (double f : e.features) {
      line += ',';
      append_double(line, f);
    }
    line += '\n';
    out << line;
  }
}

void write_jodie_csv(const EventStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_jodie_csv(stream, out);
}

std::size_t synthetic_community(const SynthConfig& cfg, NodeId node) {
  if (node < cfg.num_users) return node / (cfg.num_users / cfg.num_communities);
  return (node - cfg.num_users) / (cfg.num_items / cfg.num_communities);
}

EventStream generate_synthetic(const SynthConfig& cfg) {
  const std::size_t c = cfg.num_communities;
  if (c == 0 || cfg.num_users % c != 0 || cfg.num_items % c != 0)
    throw GenerationError("num_communities must divide num_users and num_items");
  if (!(cfg.intra_prob >= 0.0 && cfg.intra_prob <= 1.0)) throw GenerationError("intra_prob must lie in [0,1]");
  for (const auto& w : cfg.dormancy)
    if (w.user >= cfg.num_users) throw GenerationError("dormancy user out of range");

  const std::size_t users_per = cfg.num_users / c;
  const std::size_t items_per = cfg.num_items / c;
  std::mt19937_64 rng(cfg.seed);
  std::exponential_distribution<double> gap(1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.feature_noise);

  EventStream s;
  s.num_sources = cfg.num_users;
  s.num_destinations = cfg.num_items;
  s.d_edge = c;
  s.events.reserve(cfg.num_events);

  std::vector<std::size_t> active;
  active.reserve(cfg.num_users);
  double t = 0.0;
  for (std::size_t i = 0; i < cfg.num_events; ++i) {
    t += gap(rng);
    active.clear();
    for (std::size_t u = 0; u < cfg.num_users; ++u) {
      const bool dormant = std::any_of(cfg.dormancy.begin(), cfg.dormancy.end(), [&](const DormancyWindow& w) {
        return w.user == u && t >= w.start && t <= w.end;
      });
      if (!dormant) active.push_back(u);
    }
    if (active.empty())
      throw GenerationError("every user is dormant at t=" + std::to_string(t));
    const std::size_t user = active[std::uniform_int_distribution<std::size_t>(0, active.size() - 1)(rng)];
    const std::size_t uc = user / users_per;
    std::size_t item;
    if (c == 1 || unit(rng) < cfg.intra_prob) {
      item = uc * items_per + std::uniform_int_distribution<std::size_t>(0, items_per - 1)(rng);
    } else {
      // uniform over items outside the user's community
      std::size_t k = std::uniform_int_distribution<std::size_t>(0, cfg.num_items - items_per - 1)(rng);
      item = k < uc * items_per ? k : k + items_per;
    }
    const std::size_t ic = item / items_per;
    std::vector<double> f(c);
    for (std::size_t j = 0; j < c; ++j) f[j] = (j == ic ? 1.0 : 0.0) + noise(rng);
    s.events.push_back(Event{i, user, cfg.num_users + item, t, std::move(f)});
  }
  return s;
}

std::vector<DormancyWindow> random_dormancy(const SynthConfig& cfg, double fraction, double length_frac,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> users(cfg.num_users);
  std::iota(users.begin(), users.end(), 0);
  std::shuffle(users.begin(), users.end(), rng);
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(cfg.num_users)));
  const double horizon = static_cast<double>(cfg.num_events);
  const double length = length_frac * horizon;
  std::uniform_real_distribution<double> start(0.0, std::max(0.0, horizon - length));
  std::vector<DormancyWindow> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double s0 = start(rng);
    out.push_back({users[i], s0, s0 + length});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.user < b.user; });
  return out;
}

void SplitSpec::validate() const {
  if (!(train_frac > 0.0 && train_frac < 1.0 && val_frac > 0.0 && val_frac < 1.0))
    throw SplitError("train_frac and val_frac must lie in (0,1)");
  if (!(train_frac + val_frac < 1.0)) throw SplitError("train_frac + val_frac must be < 1");
  if (!(new_node_frac >= 0.0 && new_node_frac <= 0.5)) throw SplitError("new_node_frac must lie in [0, 0.5]");
}

double interpolated_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw SplitError("quantile of empty sample");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

std::vector<std::size_t> SplitResult::inductive(const EventStream& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.events.size(); ++i)
    if (is_new(split.events[i].source) || is_new(split.events[i].destination)) out.push_back(i);
  return out;
}

std::vector<std::size_t> SplitResult::transductive(const EventStream& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.events.size(); ++i)
    if (!is_new(split.events[i].source) && !is_new(split.events[i].destination)) out.push_back(i);
  return out;
}

SplitResult chronological_split(const EventStream& stream, const SplitSpec& spec) {
  spec.validate();
  if (stream.empty()) throw SplitError("cannot split an empty stream");
  std::vector<double> times;
  times.reserve(stream.size());
  for (const Event& e : stream.events) times.push_back(e.timestamp);
  if (!std::is_sorted(times.begin(), times.end())) throw SplitError("stream is not sorted by timestamp");

  SplitResult r;
  r.val_start_time = interpolated_quantile(times, spec.train_frac);
  r.test_start_time = interpolated_quantile(times, spec.train_frac + spec.val_frac);
  for (EventStream* s : {&r.train, &r.val, &r.test}) {
    s->num_sources = stream.num_sources;
    s->num_destinations = stream.num_destinations;
    s->d_edge = stream.d_edge;
  }

  // Candidates for withholding: nodes that occur in the val/test range.
  std::vector<bool> later(stream.num_nodes(), false);
  for (const Event& e : stream.events)
    if (e.timestamp > r.val_start_time) later[e.source] = later[e.destination] = true;
  std::vector<NodeId> pool;
  for (NodeId n = 0; n < later.size(); ++n)
    if (later[n]) pool.push_back(n);
  std::mt19937_64 rng(spec.seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto count = static_cast<std::size_t>(std::floor(spec.new_node_frac * static_cast<double>(pool.size())));
  r.new_nodes.assign(stream.num_nodes(), false);
  for (std::size_t i = 0; i < count; ++i) r.new_nodes[pool[i]] = true;

  for (const Event& e : stream.events) {
    if (e.timestamp <= r.val_start_time) {
      if (!r.is_new(e.source) && !r.is_new(e.destination)) r.train.events.push_back(e);
    } else if (e.timestamp <= r.test_start_time) {
      r.val.events.push_back(e);
    } else {
      r.test.events.push_back(e);
    }
  }
  if (r.train.empty()) throw SplitError("train split is empty");
  return r;
}

std::vector<std::span<const Event>> batch_iter(const EventStream& stream, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<std::span<const Event>> out;
  const std::span<const Event> all(stream.events);
  for (std::size_t i = 0; i < all.size(); i += batch_size)
    out.push_back(all.subspan(i, std::min(batch_size, all.size() - i)));
  return out;
}

}  // namespace stalegraph
