#pragma once

// Dense double-precision numerics with hand-written backward passes: affine
// maps, activations, a gated recurrent cell, parameter storage, Adam, global
// norm clipping and Xavier initialization.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "aqmix/errors.hpp"

namespace aqmix {

// ---------------------------------------------------------------------------
// SeededRng
// ---------------------------------------------------------------------------

// std::mt19937_64 stream with portable conversions: uniform() takes the top 53
// bits, index(n) uses a 128-bit multiply. The engine's textual state (as
// defined by the standard) is what checkpoints store.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) {
    const unsigned __int128 wide =
        static_cast<unsigned __int128>(engine_()) * static_cast<unsigned __int128>(n);
    return static_cast<std::size_t>(wide >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (one draw per call, the pair's second
  // value is discarded so the stream position stays simple).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Independent child stream, deterministic in the parent's state.
  Rng split() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

  std::string state() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
  }

  void set_state(const std::string& text) {
    std::istringstream in(text);
    in >> engine_;
    if (in.fail()) throw ConfigError("malformed RNG state");
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Raw kernels. Matrices are row-major; `rows` x `cols`.
// ---------------------------------------------------------------------------

namespace kernel {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// y = W x + b  (b may be null)
inline void matvec(const double* W, std::size_t rows, std::size_t cols, const double* x,
                   const double* b, double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    y[i] = dot(W + i * cols, x, cols) + (b ? b[i] : 0.0);
  }
}

// dx += W^T dy
inline void matvec_t_acc(const double* W, std::size_t rows, std::size_t cols, const double* dy,
                         double* dx) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    const double* row = W + i * cols;
    for (std::size_t j = 0; j < cols; ++j) dx[j] += g * row[j];
  }
}

// dW += dy x^T
inline void outer_acc(double* dW, std::size_t rows, std::size_t cols, const double* dy,
                      const double* x) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    double* row = dW + i * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += g * x[j];
  }
}

inline void add_to(double* dst, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

// Batched forms: one pass over W serves every vector, so a row stays in cache
// while it is reused. Per-vector arithmetic matches the single forms exactly.

// ys[b] = W xs[b] + bias
inline void matvec_batch(const double* W, std::size_t rows, std::size_t cols,
                         std::span<const double* const> xs, const double* bias,
                         std::span<double* const> ys) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = W + i * cols;
    const double bi = bias ? bias[i] : 0.0;
    for (std::size_t b = 0; b < xs.size(); ++b) ys[b][i] = dot(row, xs[b], cols) + bi;
  }
}

// dxs[b] += W^T dys[b]
inline void matvec_t_acc_batch(const double* W, std::size_t rows, std::size_t cols,
                               std::span<const double* const> dys, std::span<double* const> dxs) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = W + i * cols;
    for (std::size_t b = 0; b < dys.size(); ++b) {
      const double g = dys[b][i];
      if (g == 0.0) continue;
      double* dx = dxs[b];
      for (std::size_t j = 0; j < cols; ++j) dx[j] += g * row[j];
    }
  }
}

// dW += sum_b dys[b] xs[b]^T, accumulated in b order
inline void outer_acc_batch(double* dW, std::size_t rows, std::size_t cols,
                            std::span<const double* const> dys, std::span<const double* const> xs) {
  for (std::size_t i = 0; i < rows; ++i) {
    double* row = dW + i * cols;
    for (std::size_t b = 0; b < dys.size(); ++b) {
      const double g = dys[b][i];
      if (g == 0.0) continue;
      const double* x = xs[b];
      for (std::size_t j = 0; j < cols; ++j) row[j] += g * x[j];
    }
  }
}

}  // namespace kernel

using Batch = std::vector<std::vector<double>>;

inline std::vector<const double*> cptrs(const Batch& v) {
  std::vector<const double*> out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(x.data());
  return out;
}

inline std::vector<double*> mptrs(Batch& v) {
  std::vector<double*> out;
  out.reserve(v.size());
  for (auto& x : v) out.push_back(x.data());
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline double elu(double x) { return x >= 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x >= 0.0 ? 1.0 : std::exp(x); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// ---------------------------------------------------------------------------
// DenseMatrix
// ---------------------------------------------------------------------------

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ShapeError("DenseMatrix: data size != rows*cols");
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct AffineGrads {
  std::vector<double> dx;
  DenseMatrix dW;
  std::vector<double> db;
};

inline std::vector<double> affine(std::span<const double> x, const DenseMatrix& W,
                                  std::span<const double> b) {
  if (x.size() != W.cols() || b.size() != W.rows()) throw ShapeError("affine: shape mismatch");
  std::vector<double> y(W.rows());
  kernel::matvec(W.data().data(), W.rows(), W.cols(), x.data(), b.data(), y.data());
  return y;
}

inline AffineGrads affine_backward(std::span<const double> x, const DenseMatrix& W,
                                   std::span<const double> dy) {
  if (x.size() != W.cols() || dy.size() != W.rows())
    throw ShapeError("affine_backward: shape mismatch");
  AffineGrads g{std::vector<double>(W.cols(), 0.0), DenseMatrix(W.rows(), W.cols()),
                std::vector<double>(dy.begin(), dy.end())};
  kernel::matvec_t_acc(W.data().data(), W.rows(), W.cols(), dy.data(), g.dx.data());
  kernel::outer_acc(g.dW.data().data(), W.rows(), W.cols(), dy.data(), x.data());
  return g;
}

// ---------------------------------------------------------------------------
// ParameterStore
// ---------------------------------------------------------------------------

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool is_bias = false;
  std::size_t size() const { return rows * cols; }
};

// Named, contiguous parameter segments in one flat buffer, plus a gradient
// buffer of identical layout. Segment order is insertion order; checkpoints
// serialize in that order.
class ParameterStore {
 public:
  std::size_t add(const std::string& name, std::size_t rows, std::size_t cols, bool is_bias) {
    if (index_.count(name)) throw ShapeError("duplicate parameter segment: " + name);
    if (rows == 0 || cols == 0) throw ShapeError("empty parameter segment: " + name);
    Segment seg{name, values_.size(), rows, cols, is_bias};
    values_.resize(values_.size() + seg.size(), 0.0);
    grads_.resize(values_.size(), 0.0);
    index_[name] = segments_.size();
    segments_.push_back(seg);
    return segments_.size() - 1;
  }

  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(std::size_t id) const { return segments_[id]; }
  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("unknown parameter segment: " + name);
    return it->second;
  }

  std::size_t size() const { return values_.size(); }

  const double* value(std::size_t id) const { return values_.data() + segments_[id].offset; }
  double* value(std::size_t id) { return values_.data() + segments_[id].offset; }
  const double* grad(std::size_t id) const { return grads_.data() + segments_[id].offset; }
  double* grad(std::size_t id) { return grads_.data() + segments_[id].offset; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }

  void zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

  bool same_layout(const ParameterStore& other) const {
    if (segments_.size() != other.segments_.size()) return false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& a = segments_[i];
      const auto& b = other.segments_[i];
      if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset)
        return false;
    }
    return true;
  }

  // Copies values only; gradients are left untouched.
  void copy_values_from(const ParameterStore& other) {
    if (!same_layout(other)) throw ShapeError("copy_values_from: layout mismatch");
    values_ = other.values_;
  }

 private:
  std::vector<Segment> segments_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

// Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)).
inline DenseMatrix xavier_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw ShapeError("xavier_init: empty shape");
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

// Initializes every weight segment with Xavier-uniform and zeroes biases.
// Segments whose rows are a multiple of `gate_blocks[name]` are initialized
// block-wise so stacked gate matrices get per-gate fan-out.
inline void xavier_init_store(ParameterStore& store, Rng& rng,
                              const std::unordered_map<std::string, std::size_t>& gate_blocks = {}) {
  for (std::size_t id = 0; id < store.segments().size(); ++id) {
    const Segment& seg = store.segment(id);
    double* v = store.value(id);
    if (seg.is_bias) {
      std::fill(v, v + seg.size(), 0.0);
      continue;
    }
    std::size_t blocks = 1;
    if (auto it = gate_blocks.find(seg.name); it != gate_blocks.end()) blocks = it->second;
    const std::size_t block_rows = seg.rows / blocks;
    for (std::size_t b = 0; b < blocks; ++b) {
      DenseMatrix m = xavier_init(block_rows, seg.cols, rng);
      std::copy(m.data().begin(), m.data().end(), v + b * block_rows * seg.cols);
    }
  }
}

// ---------------------------------------------------------------------------
// Gated recurrent cell
//
//   r  = sigmoid(W_r x + U_r h + b_r)
//   z  = sigmoid(W_z x + U_z h + b_z)
//   n  = tanh(W_n x + b_nx + r * (U_n h + b_nh))
//   h' = (1 - z) * n + z * h
//
// Wx stacks [W_r; W_z; W_n] (3H x I), Uh stacks [U_r; U_z; U_n] (3H x H),
// bx = [b_r; b_z; b_nx] (3H), bnh (H).
// ---------------------------------------------------------------------------

struct GruIds {
  std::size_t Wx = 0, Uh = 0, bx = 0, bnh = 0;
  std::size_t input = 0, hidden = 0;
};

inline GruIds add_gru(ParameterStore& store, const std::string& prefix, std::size_t input,
                      std::size_t hidden) {
  GruIds ids;
  ids.input = input;
  ids.hidden = hidden;
  ids.Wx = store.add(prefix + ".Wx", 3 * hidden, input, false);
  ids.Uh = store.add(prefix + ".Uh", 3 * hidden, hidden, false);
  ids.bx = store.add(prefix + ".bx", 3 * hidden, 1, true);
  ids.bnh = store.add(prefix + ".bnh", hidden, 1, true);
  return ids;
}

struct GruCache {
  std::vector<double> x, h, r, z, n, hn;
};

// One GRU step for every row of `xs` / `hs`.
inline Batch gru_forward_batch(const ParameterStore& p, const GruIds& g, const Batch& xs,
                               const Batch& hs, std::vector<GruCache>* caches = nullptr) {
  const std::size_t H = g.hidden;
  const std::size_t B = xs.size();
  if (hs.size() != B) throw ShapeError("gru_forward: batch size mismatch");
  for (std::size_t b = 0; b < B; ++b)
    if (xs[b].size() != g.input || hs[b].size() != H) throw ShapeError("gru_forward: dimension mismatch");
  Batch gx(B, std::vector<double>(3 * H)), gh(B, std::vector<double>(3 * H));
  kernel::matvec_batch(p.value(g.Wx), 3 * H, g.input, cptrs(xs), p.value(g.bx), mptrs(gx));
  kernel::matvec_batch(p.value(g.Uh), 3 * H, H, cptrs(hs), nullptr, mptrs(gh));
  const double* bnh = p.value(g.bnh);
  if (caches) caches->resize(B);
  Batch out(B, std::vector<double>(H));
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> r(H), z(H), n(H), hn(H);
    const auto& h = hs[b];
    for (std::size_t k = 0; k < H; ++k) {
      r[k] = sigmoid(gx[b][k] + gh[b][k]);
      z[k] = sigmoid(gx[b][H + k] + gh[b][H + k]);
      hn[k] = gh[b][2 * H + k] + bnh[k];
      n[k] = std::tanh(gx[b][2 * H + k] + r[k] * hn[k]);
      out[b][k] = (1.0 - z[k]) * n[k] + z[k] * h[k];
    }
    if (caches) {
      GruCache& c = (*caches)[b];
      c.x = xs[b];
      c.h = h;
      c.r = std::move(r);
      c.z = std::move(z);
      c.n = std::move(n);
      c.hn = std::move(hn);
    }
  }
  return out;
}

inline std::vector<double> gru_forward(const ParameterStore& p, const GruIds& g,
                                       std::span<const double> x, std::span<const double> h,
                                       GruCache* cache = nullptr) {
  std::vector<GruCache> caches;
  Batch out = gru_forward_batch(p, g, {std::vector<double>(x.begin(), x.end())},
                                {std::vector<double>(h.begin(), h.end())}, cache ? &caches : nullptr);
  if (cache) *cache = std::move(caches[0]);
  return std::move(out[0]);
}

// Accumulates parameter gradients into `p.grad(...)`; adds dL/dx to `dxs` and
// dL/dh to `dhs` (both accumulated, not overwritten).
inline void gru_backward_batch(ParameterStore& p, const GruIds& g, std::span<const GruCache> cs,
                               const Batch& douts, Batch& dxs, Batch& dhs) {
  const std::size_t H = g.hidden;
  const std::size_t B = cs.size();
  if (douts.size() != B || dxs.size() != B || dhs.size() != B)
    throw ShapeError("gru_backward: batch size mismatch");
  Batch dgx(B, std::vector<double>(3 * H)), dgh(B, std::vector<double>(3 * H));
  for (std::size_t b = 0; b < B; ++b) {
    const GruCache& c = cs[b];
    if (douts[b].size() != H || dxs[b].size() != g.input || dhs[b].size() != H)
      throw ShapeError("gru_backward: dimension mismatch");
    for (std::size_t k = 0; k < H; ++k) {
      const double d = douts[b][k];
      const double dn = d * (1.0 - c.z[k]);
      const double dz = d * (c.h[k] - c.n[k]);
      dhs[b][k] += d * c.z[k];
      const double dn_pre = dn * (1.0 - c.n[k] * c.n[k]);
      const double dr = dn_pre * c.hn[k];
      const double dhn = dn_pre * c.r[k];
      const double dr_pre = dr * c.r[k] * (1.0 - c.r[k]);
      const double dz_pre = dz * c.z[k] * (1.0 - c.z[k]);
      dgx[b][k] = dr_pre;
      dgx[b][H + k] = dz_pre;
      dgx[b][2 * H + k] = dn_pre;
      dgh[b][k] = dr_pre;
      dgh[b][H + k] = dz_pre;
      dgh[b][2 * H + k] = dhn;
    }
  }
  std::vector<const double*> xs, hs, dgh_n;
  for (const auto& c : cs) {
    xs.push_back(c.x.data());
    hs.push_back(c.h.data());
  }
  for (const auto& d : dgh) dgh_n.push_back(d.data() + 2 * H);
  kernel::outer_acc_batch(p.grad(g.Wx), 3 * H, g.input, cptrs(dgx), xs);
  for (const auto& d : dgx) kernel::add_to(p.grad(g.bx), d.data(), 3 * H);
  kernel::matvec_t_acc_batch(p.value(g.Wx), 3 * H, g.input, cptrs(dgx), mptrs(dxs));
  kernel::outer_acc_batch(p.grad(g.Uh), 3 * H, H, cptrs(dgh), hs);
  for (const double* d : dgh_n) kernel::add_to(p.grad(g.bnh), d, H);
  kernel::matvec_t_acc_batch(p.value(g.Uh), 3 * H, H, cptrs(dgh), mptrs(dhs));
}

inline void gru_backward(ParameterStore& p, const GruIds& g, const GruCache& c,
                         std::span<const double> dout, std::span<double> dx, std::span<double> dh) {
  if (dx.size() != g.input || dh.size() != g.hidden) throw ShapeError("gru_backward: dimension mismatch");
  Batch dxs{std::vector<double>(dx.begin(), dx.end())};
  Batch dhs{std::vector<double>(dh.begin(), dh.end())};
  gru_backward_batch(p, g, std::span<const GruCache>(&c, 1), {std::vector<double>(dout.begin(), dout.end())},
                     dxs, dhs);
  std::copy(dxs[0].begin(), dxs[0].end(), dx.begin());
  std::copy(dhs[0].begin(), dhs[0].end(), dh.begin());
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update in place. Throws TrainingFault (parameters and
// state untouched) if any gradient is non-finite.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamOptions& opt = {}) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw ShapeError("adam_step: layout mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i]))
      throw TrainingFault("adam_step: non-finite gradient at index " + std::to_string(i));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

inline double global_norm(std::span<const double> grads) {
  double s = 0.0;
  for (double g : grads) s += g * g;
  return std::sqrt(s);
}

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
inline double clip_global_norm(std::span<double> grads, double max_norm = 10.0) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

}  // namespace aqmix
