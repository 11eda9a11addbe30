#pragma once

// Binary trainer checkpoints. All integers and floats are little-endian.
//
//   "AQMX" | u32 version
//   u32 x 10: N, T, D, F, gnn_layers, gnn_hidden, gru_hidden, head_hidden,
//             mix_hidden, hyper_hidden
//   u64 x 4:  gradient_steps, episodes_done, adam_step, parameter_count
//   str       canonical config text
//   u32       segment count, then per segment: str name, u32 rows, u32 cols,
//             rows*cols f64 online values
//   f64[P]    target values, Adam m, Adam v
//   str       RNG state
//   u64 x 3:  buffer capacity, insert counter, episodes held; then per
//             episode: f64 reward, accuracy, tokens, u32 rounds, and per
//             round: N*D f64 observations, N u8 actions, N*N u8 adjacency,
//             N*D+3 f64 global state
//
// str is a u32 byte length followed by the bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "aqmix/config.hpp"
#include "aqmix/core.hpp"
#include "aqmix/errors.hpp"
#include "aqmix/trainer.hpp"

namespace aqmix {

inline constexpr char kCheckpointMagic[4] = {'A', 'Q', 'M', 'X'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t n_agents = 0, rounds = 0, obs_dim = 0, task_features = 0;
  std::uint32_t gnn_layers = 0, gnn_hidden = 0, gru_hidden = 0, head_hidden = 0;
  std::uint32_t mix_hidden = 0, hyper_hidden = 0;

  static CheckpointHeader from(const RunConfig& c) {
    auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
    return {u(c.n_agents),   u(c.rounds),     u(c.obs_dim()),    u(c.task_features()),
            u(c.gnn_layers), u(c.gnn_hidden), u(c.gru_hidden),   u(c.head_hidden),
            u(c.mix_hidden), u(c.hyper_hidden)};
  }

  std::vector<std::pair<const char*, std::uint32_t>> fields() const {
    return {{"N", n_agents},           {"T", rounds},
            {"D", obs_dim},            {"F", task_features},
            {"gnn_layers", gnn_layers}, {"gnn_hidden", gnn_hidden},
            {"gru_hidden", gru_hidden}, {"head_hidden", head_hidden},
            {"mix_hidden", mix_hidden}, {"hyper_hidden", hyper_hidden}};
  }
};

// Throws ConfigError naming the first differing field.
inline void check_header(const CheckpointHeader& got, const CheckpointHeader& want,
                         const std::string& what) {
  const auto a = got.fields();
  const auto b = want.fields();
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a[k].second != b[k].second)
      throw ConfigError(what + ": " + a[k].first + " is " + std::to_string(a[k].second) +
                        ", expected " + std::to_string(b[k].second));
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) u8(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(u8()) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(u8()) << (8 * k);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void f64s(std::span<double> out) {
    need(out.size() * 8);
    for (double& x : out) x = f64();
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n)
      throw ConfigError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const TrainerState& s) {
  const RunConfig& cfg = s.config;
  const std::size_t n = cfg.n_agents;
  const std::size_t D = cfg.obs_dim();
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  for (auto [name, v] : CheckpointHeader::from(cfg).fields()) w.u32(v);
  w.u64(s.gradient_steps);
  w.u64(s.episodes_done);
  w.u64(s.adam.step);
  w.u64(s.online.size());
  w.str(format_config(cfg));

  w.u32(static_cast<std::uint32_t>(s.online.segments().size()));
  for (std::size_t id = 0; id < s.online.segments().size(); ++id) {
    const Segment& seg = s.online.segment(id);
    w.str(seg.name);
    w.u32(static_cast<std::uint32_t>(seg.rows));
    w.u32(static_cast<std::uint32_t>(seg.cols));
    w.f64s({s.online.value(id), seg.size()});
  }
  w.f64s(s.target.values());
  w.f64s(s.adam.m);
  w.f64s(s.adam.v);
  w.str(s.rng.state());

  w.u64(s.buffer.capacity());
  w.u64(s.buffer.inserted());
  w.u64(s.buffer.size());
  for (const Episode& ep : s.buffer.slots()) {
    w.f64(ep.reward);
    w.f64(ep.accuracy);
    w.f64(ep.tokens);
    w.u32(static_cast<std::uint32_t>(ep.rounds.size()));
    for (const RoundRecord& r : ep.rounds) {
      if (r.observations.size() != n || r.actions.size() != n || r.graph.size() != n)
        throw ShapeError("checkpoint: stored round does not match agent count");
      for (const auto& o : r.observations) {
        if (o.features.size() != D) throw ShapeError("checkpoint: stored observation has wrong size");
        w.f64s(o.features);
      }
      for (auto a : r.actions.actions) w.u8(static_cast<std::uint8_t>(to_index(a)));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w.u8(r.graph.edge(i, j) ? 1 : 0);
      w.f64s(r.state.features);
    }
  }
  return w.bytes();
}

// `expected`, when given, must match the stored dimensions.
inline TrainerState deserialize_checkpoint(std::string bytes, const RunConfig* expected = nullptr) {
  detail::ByteReader r(std::move(bytes));
  if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw ConfigError("checkpoint: bad magic (not an AQMX file)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw ConfigError("checkpoint: unsupported version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  CheckpointHeader h;
  std::uint32_t* fields[] = {&h.n_agents,   &h.rounds,     &h.obs_dim,     &h.task_features,
                             &h.gnn_layers, &h.gnn_hidden, &h.gru_hidden,  &h.head_hidden,
                             &h.mix_hidden, &h.hyper_hidden};
  for (auto* f : fields) *f = r.u32();
  if (expected) check_header(h, CheckpointHeader::from(*expected), "checkpoint mismatch");

  TrainerState s;
  s.gradient_steps = r.u64();
  s.episodes_done = r.u64();
  const std::uint64_t adam_step = r.u64();
  const std::uint64_t count = r.u64();
  s.config = parse_config_string(r.str());
  check_header(h, CheckpointHeader::from(s.config), "checkpoint header disagrees with its config");

  QMixModel layout_model(s.online, ModelDims::from(s.config));
  if (s.online.size() != count)
    throw ConfigError("checkpoint: parameter count " + std::to_string(count) + ", expected " +
                      std::to_string(s.online.size()));
  const std::uint32_t segs = r.u32();
  if (segs != s.online.segments().size())
    throw ConfigError("checkpoint: " + std::to_string(segs) + " segments, expected " +
                      std::to_string(s.online.segments().size()));
  for (std::size_t id = 0; id < segs; ++id) {
    const Segment& seg = s.online.segment(id);
    const std::string name = r.str();
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (name != seg.name || rows != seg.rows || cols != seg.cols)
      throw ConfigError("checkpoint: segment " + std::to_string(id) + " is " + name + " (" +
                        std::to_string(rows) + "x" + std::to_string(cols) + "), expected " +
                        seg.name + " (" + std::to_string(seg.rows) + "x" +
                        std::to_string(seg.cols) + ")");
    r.f64s({s.online.value(id), seg.size()});
  }
  s.target = s.online;
  r.f64s(s.target.values());
  s.adam = AdamState(s.online.size());
  s.adam.step = adam_step;
  r.f64s(s.adam.m);
  r.f64s(s.adam.v);
  s.rng.set_state(r.str());

  const std::size_t n = s.config.n_agents;
  const std::size_t D = s.config.obs_dim();
  const std::uint64_t capacity = r.u64();
  const std::uint64_t inserted = r.u64();
  const std::uint64_t held = r.u64();
  if (capacity != s.config.buffer_capacity)
    throw ConfigError("checkpoint: buffer capacity " + std::to_string(capacity) + ", expected " +
                      std::to_string(s.config.buffer_capacity));
  if (held > capacity || held > inserted) throw ConfigError("checkpoint: inconsistent buffer counters");
  std::vector<Episode> slots(held);
  for (Episode& ep : slots) {
    ep.reward = r.f64();
    ep.accuracy = r.f64();
    ep.tokens = r.f64();
    const std::uint32_t rounds = r.u32();
    if (rounds != s.config.rounds) throw ConfigError("checkpoint: stored episode has wrong round count");
    ep.rounds.resize(rounds);
    for (RoundRecord& rec : ep.rounds) {
      rec.observations.resize(n);
      for (auto& o : rec.observations) {
        o.features.resize(D);
        r.f64s(o.features);
      }
      rec.actions.actions.resize(n);
      for (auto& a : rec.actions.actions) {
        const std::uint8_t code = r.u8();
        if (code >= kNumActions) throw ConfigError("checkpoint: bad action code");
        a = action_from_index(code);
      }
      rec.graph = CommGraph::identity(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const std::uint8_t e = r.u8();
          if (i == j ? e != 1 : e > 1) throw ConfigError("checkpoint: bad adjacency entry");
          if (e && i != j) rec.graph.add_edge(i, j);
        }
      rec.state.features.resize(s.config.state_dim());
      r.f64s(rec.state.features);
    }
  }
  s.buffer = ReplayBuffer(capacity);
  s.buffer.restore(std::move(slots), inserted);
  if (!r.done()) throw ConfigError("checkpoint: trailing bytes after buffer");
  return s;
}

inline void save_checkpoint(const TrainerState& s, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(s);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing checkpoint '" + path.string() + "'");
}

inline TrainerState load_checkpoint(const std::filesystem::path& path,
                                    const RunConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(std::move(bytes), expected);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace aqmix
