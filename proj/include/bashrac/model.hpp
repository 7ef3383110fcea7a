#pragma once

// Tiny decoder-only causal transformer with an explicit forward pass and
// hand-written backward pass.
//
// Architecture: learned token + absolute position embeddings, n_layers
// pre-norm blocks (multi-head causal self-attention, GELU MLP), final layer
// norm and an untied output projection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bashrac/matrix.hpp"
#include "bashrac/rng.hpp"
#include "bashrac/vocab.hpp"

namespace bashrac {

enum class Precision { f32, f64 };

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int context_len = 160;
  int vocab_size = 44;
  Precision precision = Precision::f32;

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    auto positive = [&](int v, const char* name) {
      if (v < 1) out.push_back(std::string(name) + " must be positive");
    };
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(d_model, "d_model");
    positive(d_ff, "d_ff");
    positive(context_len, "context_len");
    positive(vocab_size, "vocab_size");
    if (n_heads > 0 && d_model % n_heads != 0) out.push_back("d_model must be divisible by n_heads");
    if (vocab_size > 0 && vocab_size <= Vocab::kNumSpecial) out.push_back("vocab_size too small for special tokens");
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (!p.empty()) throw std::invalid_argument("invalid ModelConfig: " + p.front());
  }

  int head_dim() const noexcept { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

class ContextOverflow : public std::length_error {
 public:
  using std::length_error::length_error;
};

struct Slot {
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct LayerSlots {
  Slot ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
};

/// Offsets of every tensor inside the flat parameter vector, in declared
/// (and serialized) order.
struct ParamLayout {
  Slot wte, wpe;
  std::vector<LayerSlots> layers;
  Slot lnf_g, lnf_b, w_head;
  std::size_t total = 0;

  static ParamLayout of(const ModelConfig& c) {
    ParamLayout l;
    std::size_t at = 0;
    auto take = [&](std::size_t n) {
      Slot s{at, n};
      at += n;
      return s;
    };
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto ff = static_cast<std::size_t>(c.d_ff);
    const auto v = static_cast<std::size_t>(c.vocab_size);
    l.wte = take(v * d);
    l.wpe = take(static_cast<std::size_t>(c.context_len) * d);
    for (int i = 0; i < c.n_layers; ++i) {
      LayerSlots s;
      s.ln1_g = take(d);
      s.ln1_b = take(d);
      s.w_qkv = take(d * 3 * d);
      s.b_qkv = take(3 * d);
      s.w_o = take(d * d);
      s.b_o = take(d);
      s.ln2_g = take(d);
      s.ln2_b = take(d);
      s.w_fc = take(d * ff);
      s.b_fc = take(ff);
      s.w_proj = take(ff * d);
      s.b_proj = take(d);
      l.layers.push_back(s);
    }
    l.lnf_g = take(d);
    l.lnf_b = take(d);
    l.w_head = take(d * v);
    l.total = at;
    return l;
  }

  /// (name, slot) pairs in declared order, for diagnostics and per-group checks.
  std::vector<std::pair<std::string, Slot>> named() const {
    std::vector<std::pair<std::string, Slot>> out{{"wte", wte}, {"wpe", wpe}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto p = "h" + std::to_string(i) + ".";
      const auto& s = layers[i];
      for (auto [n, sl] : {std::pair{"ln1_g", s.ln1_g}, {"ln1_b", s.ln1_b}, {"w_qkv", s.w_qkv}, {"b_qkv", s.b_qkv},
                           {"w_o", s.w_o}, {"b_o", s.b_o}, {"ln2_g", s.ln2_g}, {"ln2_b", s.ln2_b},
                           {"w_fc", s.w_fc}, {"b_fc", s.b_fc}, {"w_proj", s.w_proj}, {"b_proj", s.b_proj}})
        out.emplace_back(p + n, sl);
    }
    out.emplace_back("lnf_g", lnf_g);
    out.emplace_back("lnf_b", lnf_b);
    out.emplace_back("w_head", w_head);
    return out;
  }
};

/// All model weights in one flat vector. Also used as the gradient container.
template <class T>
struct Params {
  ModelConfig config;
  ParamLayout layout;
  std::vector<T> values;

  Params() = default;
  explicit Params(const ModelConfig& c) : config(c), layout(ParamLayout::of(c)), values(layout.total, T(0)) {
    config.validate();
  }

  std::size_t size() const noexcept { return values.size(); }
  T* at(Slot s) noexcept { return values.data() + s.offset; }
  const T* at(Slot s) const noexcept { return values.data() + s.offset; }
  std::span<T> span(Slot s) noexcept { return {at(s), s.size}; }
  std::span<const T> span(Slot s) const noexcept { return {at(s), s.size}; }

  Params zeros_like() const {
    Params p;
    p.config = config;
    p.layout = layout;
    p.values.assign(values.size(), T(0));
    return p;
  }

  template <class U>
  Params<U> cast() const {
    Params<U> p;
    p.config = config;
    p.config.precision = sizeof(U) == 8 ? Precision::f64 : Precision::f32;
    p.layout = layout;
    p.values.assign(values.begin(), values.end());
    return p;
  }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
  }

  Params& operator+=(const Params& o) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
};

/// Deterministic init: N(0, 0.02) weights, residual projections scaled by
/// 1/sqrt(2 * n_layers), unit layer-norm gains, zero biases.
template <class T>
Params<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  Params<T> p(config);
  Rng rng = Rng::stream(seed, "init");
  constexpr double std_dev = 0.02;
  const double resid_std = std_dev / std::sqrt(2.0 * config.n_layers);
  auto normal = [&](Slot s, double sd) {
    for (auto& v : p.span(s)) v = static_cast<T>(rng.normal() * sd);
  };
  auto ones = [&](Slot s) { std::fill_n(p.at(s), s.size, T(1)); };
  normal(p.layout.wte, std_dev);
  normal(p.layout.wpe, std_dev);
  for (const auto& l : p.layout.layers) {
    ones(l.ln1_g);
    normal(l.w_qkv, std_dev);
    normal(l.w_o, resid_std);
    ones(l.ln2_g);
    normal(l.w_fc, std_dev);
    normal(l.w_proj, resid_std);
  }
  ones(p.layout.lnf_g);
  normal(p.layout.w_head, std_dev);
  return p;
}

// ---------------------------------------------------------------------------
// Forward

template <class T>
struct TransposedWeights;

/// Activations for a growing prefix of one sequence. Rows can be appended
/// incrementally (cached decoding) or all at once (training); both give
/// bit-identical rows.
template <class T>
class Workspace {
 public:
  struct Layer {
    Matrix<T> ln1, qkv, att, ln2, fc, act;
    std::vector<T> mean1, rstd1, mean2, rstd2;
    std::vector<T> probs;  // [head][row][col], row-major context_len x context_len per head
  };

  explicit Workspace(const ModelConfig& c) : config_(c) {
    const auto C = static_cast<std::size_t>(c.context_len);
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto ff = static_cast<std::size_t>(c.d_ff);
    for (int i = 0; i <= c.n_layers; ++i) resid_.emplace_back(C, d);
    mid_.reserve(static_cast<std::size_t>(c.n_layers));
    for (int i = 0; i < c.n_layers; ++i) {
      mid_.emplace_back(C, d);
      Layer l;
      l.ln1 = Matrix<T>(C, d);
      l.qkv = Matrix<T>(C, 3 * d);
      l.att = Matrix<T>(C, d);
      l.ln2 = Matrix<T>(C, d);
      l.fc = Matrix<T>(C, ff);
      l.act = Matrix<T>(C, ff);
      l.mean1.assign(C, 0);
      l.rstd1.assign(C, 0);
      l.mean2.assign(C, 0);
      l.rstd2.assign(C, 0);
      l.probs.assign(static_cast<std::size_t>(c.n_heads) * C * C, 0);
      layers_.push_back(std::move(l));
    }
    lnf_ = Matrix<T>(C, d);
    meanf_.assign(C, 0);
    rstdf_.assign(C, 0);
    logits_ = Matrix<T>(C, static_cast<std::size_t>(c.vocab_size));
  }

  std::size_t length() const noexcept { return ids_.size(); }
  const Tokens& ids() const noexcept { return ids_; }
  void clear() noexcept { ids_.clear(); }
  void truncate(std::size_t n) { ids_.resize(std::min(n, ids_.size())); }

  std::span<const T> logits(std::size_t r) const { return logits_.row(r); }
  /// Final-layer (post layer norm) hidden state of row r.
  std::span<const T> hidden(std::size_t r) const { return lnf_.row(r); }

  const ModelConfig& config() const noexcept { return config_; }

 private:
  template <class U>
  friend void extend(const Params<U>&, Workspace<U>&, std::span<const TokenId>);
  template <class U>
  friend void backward(const Params<U>&, const Workspace<U>&, const Matrix<U>&, Params<U>&, const TransposedWeights<U>&);

  ModelConfig config_;
  Tokens ids_;
  std::vector<Matrix<T>> resid_;  // resid_[l] is the input of layer l; resid_[L] feeds the final norm
  std::vector<Matrix<T>> mid_;    // residual stream after attention, per layer
  std::vector<Layer> layers_;
  Matrix<T> lnf_;
  std::vector<T> meanf_, rstdf_;
  Matrix<T> logits_;
};

namespace detail {

constexpr double kLnEps = 1e-5;

template <class T>
void layernorm_rows(const Matrix<T>& x, const T* g, const T* b, Matrix<T>& y, std::vector<T>& mean,
                    std::vector<T>& rstd, std::size_t r0, std::size_t r1) {
  const std::size_t d = x.cols();
  for (std::size_t r = r0; r < r1; ++r) {
    const T* xr = x.row_ptr(r);
    T m = 0;
    for (std::size_t i = 0; i < d; ++i) m += xr[i];
    m /= static_cast<T>(d);
    T v = 0;
    for (std::size_t i = 0; i < d; ++i) v += (xr[i] - m) * (xr[i] - m);
    v /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(v + static_cast<T>(kLnEps));
    mean[r] = m;
    rstd[r] = rs;
    T* yr = y.row_ptr(r);
    for (std::size_t i = 0; i < d; ++i) yr[i] = (xr[i] - m) * rs * g[i] + b[i];
  }
}

/// dx (+)= layer norm backward of dy; accumulates dg/db.
template <class T>
void layernorm_backward(const Matrix<T>& x, const std::vector<T>& mean, const std::vector<T>& rstd, const T* g,
                        const Matrix<T>& dy, std::size_t n, Matrix<T>& dx, T* dg, T* db) {
  const std::size_t d = x.cols();
  std::vector<T> xhat(d), dxhat(d);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.row_ptr(r);
    const T* dyr = dy.row_ptr(r);
    T sum_dxhat = 0, sum_dxhat_xhat = 0;
    for (std::size_t i = 0; i < d; ++i) {
      xhat[i] = (xr[i] - mean[r]) * rstd[r];
      dxhat[i] = dyr[i] * g[i];
      dg[i] += dyr[i] * xhat[i];
      db[i] += dyr[i];
      sum_dxhat += dxhat[i];
      sum_dxhat_xhat += dxhat[i] * xhat[i];
    }
    T* dxr = dx.row_ptr(r);
    const T inv_d = T(1) / static_cast<T>(d);
    for (std::size_t i = 0; i < d; ++i)
      dxr[i] += rstd[r] * (dxhat[i] - inv_d * sum_dxhat - xhat[i] * inv_d * sum_dxhat_xhat);
  }
}

template <class T>
T gelu(T x) {
  constexpr T k = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
}

template <class T>
T gelu_grad(T x) {
  constexpr T k = static_cast<T>(0.7978845608028654);
  const T u = k * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(u);
  const T du = k * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

}  // namespace detail

/// Appends `new_ids` to the workspace and computes their activations and
/// logits. Earlier rows are reused as the attention cache.
template <class T>
void extend(const Params<T>& p, Workspace<T>& ws, std::span<const TokenId> new_ids) {
  const auto& c = p.config;
  const auto C = static_cast<std::size_t>(c.context_len);
  const std::size_t r0 = ws.ids_.size();
  const std::size_t r1 = r0 + new_ids.size();
  if (r1 > C)
    throw ContextOverflow("sequence of length " + std::to_string(r1) + " exceeds context length " +
                          std::to_string(C));
  for (TokenId t : new_ids)
    if (t < 0 || t >= c.vocab_size) throw std::out_of_range("token id " + std::to_string(t) + " out of range");

  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const auto H = static_cast<std::size_t>(c.n_heads);
  const auto hd = d / H;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  const T* wte = p.at(p.layout.wte);
  const T* wpe = p.at(p.layout.wpe);
  for (std::size_t r = r0; r < r1; ++r) {
    const auto tok = static_cast<std::size_t>(new_ids[r - r0]);
    T* x = ws.resid_[0].row_ptr(r);
    for (std::size_t i = 0; i < d; ++i) x[i] = wte[tok * d + i] + wpe[r * d + i];
  }
  ws.ids_.insert(ws.ids_.end(), new_ids.begin(), new_ids.end());

  std::vector<T> scores(C);
  for (std::size_t li = 0; li < static_cast<std::size_t>(c.n_layers); ++li) {
    const auto& s = p.layout.layers[li];
    auto& L = ws.layers_[li];
    const Matrix<T>& x_in = ws.resid_[li];
    Matrix<T>& x_mid = ws.mid_[li];
    Matrix<T>& x_out = ws.resid_[li + 1];

    detail::layernorm_rows(x_in, p.at(s.ln1_g), p.at(s.ln1_b), L.ln1, L.mean1, L.rstd1, r0, r1);
    kernels::linear_rows(L.ln1.data(), d, p.at(s.w_qkv), p.at(s.b_qkv), 3 * d, L.qkv.data(), r0, r1);

    for (std::size_t r = r0; r < r1; ++r) {
      const T* qrow = L.qkv.row_ptr(r);
      T* out = L.att.row_ptr(r);
      for (std::size_t h = 0; h < H; ++h) {
        const T* q = qrow + h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t t = 0; t <= r; ++t) {
          const T* k = L.qkv.row_ptr(t) + d + h * hd;
          T dot = 0;
          for (std::size_t i = 0; i < hd; ++i) dot += q[i] * k[i];
          scores[t] = dot * scale;
          mx = std::max(mx, scores[t]);
        }
        T sum = 0;
        for (std::size_t t = 0; t <= r; ++t) {
          scores[t] = std::exp(scores[t] - mx);
          sum += scores[t];
        }
        T* prow = L.probs.data() + (h * C + r) * C;
        T* o = out + h * hd;
        for (std::size_t i = 0; i < hd; ++i) o[i] = 0;
        for (std::size_t t = 0; t <= r; ++t) {
          const T pt = scores[t] / sum;
          prow[t] = pt;
          const T* v = L.qkv.row_ptr(t) + 2 * d + h * hd;
          for (std::size_t i = 0; i < hd; ++i) o[i] += pt * v[i];
        }
      }
    }

    kernels::linear_rows(L.att.data(), d, p.at(s.w_o), p.at(s.b_o), d, x_mid.data(), r0, r1);
    for (std::size_t r = r0; r < r1; ++r) {
      T* m = x_mid.row_ptr(r);
      const T* xi = x_in.row_ptr(r);
      for (std::size_t i = 0; i < d; ++i) m[i] += xi[i];
    }

    detail::layernorm_rows(x_mid, p.at(s.ln2_g), p.at(s.ln2_b), L.ln2, L.mean2, L.rstd2, r0, r1);
    kernels::linear_rows(L.ln2.data(), d, p.at(s.w_fc), p.at(s.b_fc), ff, L.fc.data(), r0, r1);
    for (std::size_t r = r0; r < r1; ++r) {
      const T* f = L.fc.row_ptr(r);
      T* a = L.act.row_ptr(r);
      for (std::size_t i = 0; i < ff; ++i) a[i] = detail::gelu(f[i]);
    }
    kernels::linear_rows(L.act.data(), ff, p.at(s.w_proj), p.at(s.b_proj), d, x_out.data(), r0, r1);
    for (std::size_t r = r0; r < r1; ++r) {
      T* o = x_out.row_ptr(r);
      const T* m = x_mid.row_ptr(r);
      for (std::size_t i = 0; i < d; ++i) o[i] += m[i];
    }
  }

  detail::layernorm_rows(ws.resid_.back(), p.at(p.layout.lnf_g), p.at(p.layout.lnf_b), ws.lnf_, ws.meanf_, ws.rstdf_,
                         r0, r1);
  kernels::linear_rows(ws.lnf_.data(), d, p.at(p.layout.w_head), static_cast<const T*>(nullptr), V,
                       ws.logits_.data(), r0, r1);
}

/// Causal next-token logits for every position of `ids` (rows x vocab).
template <class T>
Matrix<T> forward(const Params<T>& p, std::span<const TokenId> ids) {
  Workspace<T> ws(p.config);
  extend(p, ws, ids);
  Matrix<T> out(ids.size(), static_cast<std::size_t>(p.config.vocab_size));
  for (std::size_t r = 0; r < ids.size(); ++r) std::copy_n(ws.logits(r).data(), out.cols(), out.row_ptr(r));
  return out;
}

// ---------------------------------------------------------------------------
// Backward

/// Transposed copies of the dense weights, built once per batch for the
/// input-gradient kernels.
template <class T>
struct TransposedWeights {
  struct Layer {
    std::vector<T> w_qkv, w_o, w_fc, w_proj;
  };
  std::vector<Layer> layers;
  std::vector<T> w_head;

  explicit TransposedWeights(const Params<T>& p) {
    const auto d = static_cast<std::size_t>(p.config.d_model);
    const auto ff = static_cast<std::size_t>(p.config.d_ff);
    const auto V = static_cast<std::size_t>(p.config.vocab_size);
    auto tr = [](const T* src, std::size_t rows, std::size_t cols) {
      std::vector<T> dst(rows * cols);
      kernels::transpose(src, rows, cols, dst.data());
      return dst;
    };
    for (const auto& s : p.layout.layers) {
      layers.push_back({tr(p.at(s.w_qkv), d, 3 * d), tr(p.at(s.w_o), d, d), tr(p.at(s.w_fc), d, ff),
                        tr(p.at(s.w_proj), ff, d)});
    }
    w_head = tr(p.at(p.layout.w_head), d, V);
  }
};

/// Accumulates into `grads` the gradient of sum(dlogits .* logits) over the
/// workspace's rows.
template <class T>
void backward(const Params<T>& p, const Workspace<T>& ws, const Matrix<T>& dlogits, Params<T>& grads,
              const TransposedWeights<T>& wt) {
  const auto& c = p.config;
  const std::size_t n = ws.length();
  const auto C = static_cast<std::size_t>(c.context_len);
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const auto H = static_cast<std::size_t>(c.n_heads);
  const auto hd = d / H;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  Matrix<T> d_norm(n, d), dx(n, d), d_small(n, d), d_qkv(n, 3 * d);
  Matrix<T> d_mid(n, d), d_act(n, ff);

  kernels::linear_weight_grad(ws.lnf_.data(), d, dlogits.data(), V, n, grads.at(p.layout.w_head),
                              static_cast<T*>(nullptr));
  kernels::linear_input_grad(dlogits.data(), V, wt.w_head.data(), d, d_norm.data(), n);
  detail::layernorm_backward(ws.resid_.back(), ws.meanf_, ws.rstdf_, p.at(p.layout.lnf_g), d_norm, n, dx,
                             grads.at(p.layout.lnf_g), grads.at(p.layout.lnf_b));

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& s = p.layout.layers[li];
    const auto& L = ws.layers_[li];
    const auto& tw = wt.layers[li];

    // x_out = x_mid + proj(gelu(fc(ln2(x_mid))))
    kernels::linear_weight_grad(L.act.data(), ff, dx.data(), d, n, grads.at(s.w_proj), grads.at(s.b_proj));
    kernels::linear_input_grad(dx.data(), d, tw.w_proj.data(), ff, d_act.data(), n);
    for (std::size_t r = 0; r < n; ++r) {
      T* da = d_act.row_ptr(r);
      const T* f = L.fc.row_ptr(r);
      for (std::size_t i = 0; i < ff; ++i) da[i] *= detail::gelu_grad(f[i]);
    }
    kernels::linear_weight_grad(L.ln2.data(), d, d_act.data(), ff, n, grads.at(s.w_fc), grads.at(s.b_fc));
    kernels::linear_input_grad(d_act.data(), ff, tw.w_fc.data(), d, d_norm.data(), n);
    for (std::size_t r = 0; r < n; ++r) std::copy_n(dx.row_ptr(r), d, d_mid.row_ptr(r));
    detail::layernorm_backward(ws.mid_[li], L.mean2, L.rstd2, p.at(s.ln2_g), d_norm, n, d_mid, grads.at(s.ln2_g),
                               grads.at(s.ln2_b));

    // x_mid = x_in + o(attention(qkv(ln1(x_in))))
    kernels::linear_weight_grad(L.att.data(), d, d_mid.data(), d, n, grads.at(s.w_o), grads.at(s.b_o));
    kernels::linear_input_grad(d_mid.data(), d, tw.w_o.data(), d, d_small.data(), n);

    d_qkv.fill(T(0));
    std::vector<T> dp(n);
    for (std::size_t r = 0; r < n; ++r) {
      const T* datt = d_small.row_ptr(r);
      const T* qrow = L.qkv.row_ptr(r);
      T* dq_row = d_qkv.row_ptr(r);
      for (std::size_t h = 0; h < H; ++h) {
        const T* prow = L.probs.data() + (h * C + r) * C;
        const T* g = datt + h * hd;
        T dot_pdp = 0;
        for (std::size_t t = 0; t <= r; ++t) {
          const T* v = L.qkv.row_ptr(t) + 2 * d + h * hd;
          T acc = 0;
          for (std::size_t i = 0; i < hd; ++i) acc += g[i] * v[i];
          dp[t] = acc;
          dot_pdp += prow[t] * acc;
          T* dv = d_qkv.row_ptr(t) + 2 * d + h * hd;
          for (std::size_t i = 0; i < hd; ++i) dv[i] += prow[t] * g[i];
        }
        const T* q = qrow + h * hd;
        T* dq = dq_row + h * hd;
        for (std::size_t t = 0; t <= r; ++t) {
          const T ds = prow[t] * (dp[t] - dot_pdp) * scale;
          if (ds == T(0)) continue;
          const T* k = L.qkv.row_ptr(t) + d + h * hd;
          T* dk = d_qkv.row_ptr(t) + d + h * hd;
          for (std::size_t i = 0; i < hd; ++i) {
            dq[i] += ds * k[i];
            dk[i] += ds * q[i];
          }
        }
      }
    }

    kernels::linear_weight_grad(L.ln1.data(), d, d_qkv.data(), 3 * d, n, grads.at(s.w_qkv), grads.at(s.b_qkv));
    kernels::linear_input_grad(d_qkv.data(), 3 * d, tw.w_qkv.data(), d, d_norm.data(), n);
    dx = d_mid;
    detail::layernorm_backward(ws.resid_[li], L.mean1, L.rstd1, p.at(s.ln1_g), d_norm, n, dx, grads.at(s.ln1_g),
                               grads.at(s.ln1_b));
  }

  T* gwte = grads.at(p.layout.wte);
  T* gwpe = grads.at(p.layout.wpe);
  for (std::size_t r = 0; r < n; ++r) {
    const auto tok = static_cast<std::size_t>(ws.ids()[r]);
    const T* g = dx.row_ptr(r);
    for (std::size_t i = 0; i < d; ++i) {
      gwte[tok * d + i] += g[i];
      gwpe[r * d + i] += g[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Loss

/// One training row set: row p of `inputs` predicts `targets[p]` when
/// `mask[p]` is 1.
struct TrainSequence {
  Tokens inputs;
  Tokens targets;
  std::vector<std::uint8_t> mask;

  std::size_t active() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
};

template <class T>
struct LossAndGrads {
  double loss = 0.0;          // mean over unmasked positions of -log p(target)
  std::size_t token_count = 0;
  Params<T> grads;
};

/// Masked mean cross-entropy over a batch of sequences and its gradient.
/// A batch with no unmasked position yields zero loss and zero gradient.
template <class T>
LossAndGrads<T> loss_and_grads(const Params<T>& p, std::span<const TrainSequence> batch) {
  LossAndGrads<T> out;
  out.grads = p.zeros_like();
  std::size_t count = 0;
  for (const auto& seq : batch) {
    if (seq.inputs.size() != seq.targets.size() || seq.inputs.size() != seq.mask.size())
      throw std::invalid_argument("loss_and_grads: inputs/targets/mask lengths differ");
    for (std::size_t i = 0; i < seq.mask.size(); ++i) {
      if (seq.mask[i] > 1) throw std::invalid_argument("loss_and_grads: mask values must be 0 or 1");
      if (seq.mask[i] && (seq.targets[i] < 0 || seq.targets[i] >= p.config.vocab_size))
        throw std::out_of_range("loss_and_grads: target id out of range");
    }
    count += seq.active();
  }
  out.token_count = count;
  if (count == 0) return out;

  const auto V = static_cast<std::size_t>(p.config.vocab_size);
  const TransposedWeights<T> wt(p);
  Workspace<T> ws(p.config);
  const double inv_count = 1.0 / static_cast<double>(count);
  double total = 0.0;
  std::vector<double> prob(V);
  for (const auto& seq : batch) {
    if (seq.active() == 0) continue;
    ws.clear();
    extend(p, ws, std::span<const TokenId>(seq.inputs));
    const std::size_t n = seq.inputs.size();
    Matrix<T> dlogits(n, V);
    for (std::size_t r = 0; r < n; ++r) {
      if (!seq.mask[r]) continue;
      const auto row = ws.logits(r);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t v = 0; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
      double sum = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        prob[v] = std::exp(static_cast<double>(row[v]) - mx);
        sum += prob[v];
      }
      const auto tgt = static_cast<std::size_t>(seq.targets[r]);
      total += -(static_cast<double>(row[tgt]) - mx - std::log(sum));
      T* dl = dlogits.row_ptr(r);
      for (std::size_t v = 0; v < V; ++v) dl[v] = static_cast<T>((prob[v] / sum - (v == tgt ? 1.0 : 0.0)) * inv_count);
    }
    backward(p, ws, dlogits, out.grads, wt);
  }
  out.loss = total * inv_count;
  return out;
}

/// Loss only (no gradient), same definition as loss_and_grads.
template <class T>
double loss_value(const Params<T>& p, std::span<const TrainSequence> batch) {
  const auto V = static_cast<std::size_t>(p.config.vocab_size);
  Workspace<T> ws(p.config);
  std::size_t count = 0;
  double total = 0.0;
  for (const auto& seq : batch) {
    if (seq.active() == 0) continue;
    ws.clear();
    extend(p, ws, std::span<const TokenId>(seq.inputs));
    for (std::size_t r = 0; r < seq.inputs.size(); ++r) {
      if (!seq.mask[r]) continue;
      const auto row = ws.logits(r);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t v = 0; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
      double sum = 0.0;
      for (std::size_t v = 0; v < V; ++v) sum += std::exp(static_cast<double>(row[v]) - mx);
      total += -(static_cast<double>(row[static_cast<std::size_t>(seq.targets[r])]) - mx - std::log(sum));
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace bashrac
