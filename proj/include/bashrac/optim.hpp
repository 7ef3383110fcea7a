#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "bashrac/model.hpp"

namespace bashrac {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <class T>
struct OptimizerState {
  std::vector<T> m, v;
  std::int64_t step = 0;
  AdamWConfig hyper;

  OptimizerState() = default;
  OptimizerState(std::size_t n, AdamWConfig h) : m(n, T(0)), v(n, T(0)), hyper(h) {}
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One AdamW update with bias correction and decoupled weight decay:
///   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// Rejects the step, leaving params and state untouched, if any gradient is
/// non-finite.
template <class T>
void optimizer_step(Params<T>& params, const Params<T>& grads, OptimizerState<T>& state, double lr) {
  const std::size_t n = params.values.size();
  if (grads.values.size() != n || state.m.size() != n || state.v.size() != n)
    throw std::invalid_argument("optimizer_step: shape mismatch");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(grads.values[i]))
      throw NonFiniteGradient("non-finite gradient at flat index " + std::to_string(i));

  ++state.step;
  const auto& h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(h.eps);
  const T decay = static_cast<T>(lr * h.weight_decay);
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grads.values[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T denom = std::sqrt(state.v[i]) * inv_sqrt_bc2 + eps;
    params.values[i] -= step_size * state.m[i] / denom + decay * params.values[i];
  }
}

/// Scales grads in place so their global L2 norm is at most max_norm; returns
/// the norm before clipping. max_norm <= 0 disables clipping.
template <class T>
double clip_grad_norm(Params<T>& grads, double max_norm) {
  double sq = 0.0;
  for (T g : grads.values) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (T& g : grads.values) g *= s;
  }
  return norm;
}

enum class Schedule { constant, cosine };

/// Linear warmup from 0 to base_lr over the first floor(warmup_frac * total)
/// steps, then constant or cosine decay towards 0 at `total`.
inline double learning_rate(Schedule schedule, double base_lr, double warmup_frac, std::int64_t step,
                            std::int64_t total) {
  if (total <= 0) return base_lr;
  const auto warm = static_cast<std::int64_t>(std::floor(warmup_frac * static_cast<double>(total)));
  if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (schedule == Schedule::constant) return base_lr;
  const auto span = total - warm;
  if (span <= 0) return base_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(span);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace bashrac
