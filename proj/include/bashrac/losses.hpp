#pragma once

// The maximum-likelihood objectives, as masked per-token means:
//   sft:  -log p(y^j | BOS, x, y^{<j})
//   bash: -log p(y^j | BOS, x, mixed^{<j})
//   rac:  -log p(label^j | BOS, x, z^{<j}) where mask^j = 1
// and their equal-weight sum for one combined update.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bashrac/corpus.hpp"
#include "bashrac/mixing.hpp"
#include "bashrac/model.hpp"
#include "bashrac/rac.hpp"

namespace bashrac {

struct BatchLoss {
  double value = 0.0;
  std::size_t token_count = 0;
  std::vector<std::pair<std::string, double>> components;

  double component(std::string_view name) const {
    for (const auto& [n, v] : components)
      if (n == name) return v;
    return 0.0;
  }
};

template <class T>
struct LossResult {
  BatchLoss loss;
  Params<T> grads;
};

namespace detail {

/// Rows: BOS, x, context[0..L-1). Row T+j predicts targets[j].
inline TrainSequence continuation_sequence(const Tokens& prompt, std::span<const TokenId> context,
                                           std::span<const TokenId> targets, std::span<const std::uint8_t> mask) {
  TrainSequence s;
  const std::size_t T = prompt.size();
  const std::size_t L = targets.size();
  s.inputs.reserve(T + L);
  s.inputs.push_back(Vocab::kBos);
  s.inputs.insert(s.inputs.end(), prompt.begin(), prompt.end());
  s.inputs.insert(s.inputs.end(), context.begin(), context.begin() + static_cast<std::ptrdiff_t>(L - 1));
  s.targets.assign(T + L, Vocab::kPad);
  s.mask.assign(T + L, 0);
  for (std::size_t j = 0; j < L; ++j) {
    s.targets[T + j] = targets[j];
    s.mask[T + j] = mask.empty() ? 1 : mask[j];
  }
  return s;
}

template <class T>
LossResult<T> finish(const Params<T>& p, const std::vector<TrainSequence>& seqs, const char* name) {
  auto lg = loss_and_grads(p, std::span<const TrainSequence>(seqs));
  LossResult<T> out{{lg.loss, lg.token_count, {{name, lg.loss}}}, std::move(lg.grads)};
  return out;
}

}  // namespace detail

inline TrainSequence sft_sequence(const Example& ex) {
  return detail::continuation_sequence(ex.prompt, ex.continuation, ex.continuation, {});
}

inline TrainSequence bash_sequence(const MixedExample& m) {
  return detail::continuation_sequence(m.example.prompt, m.mixed, m.example.continuation, {});
}

inline TrainSequence rac_sequence(const RacExample& r) {
  return detail::continuation_sequence(r.example.prompt, r.response, r.labels, r.mask);
}

template <class T>
LossResult<T> sft_loss(const Params<T>& p, std::span<const Example> batch) {
  std::vector<TrainSequence> seqs;
  seqs.reserve(batch.size());
  for (const auto& ex : batch) seqs.push_back(sft_sequence(ex));
  return detail::finish(p, seqs, "sft");
}

template <class T>
LossResult<T> bash_loss(const Params<T>& p, std::span<const MixedExample> batch) {
  std::vector<TrainSequence> seqs;
  seqs.reserve(batch.size());
  for (const auto& m : batch) seqs.push_back(bash_sequence(m));
  return detail::finish(p, seqs, "aux");
}

template <class T>
LossResult<T> rac_loss(const Params<T>& p, std::span<const RacExample> batch) {
  std::vector<TrainSequence> seqs;
  seqs.reserve(batch.size());
  for (const auto& r : batch) seqs.push_back(rac_sequence(r));
  return detail::finish(p, seqs, "aux");
}

/// J_sft(sft_batch) + J_aux(aux_batch) with equal weights. The SFT term is
/// dropped only when include_sft is false (ablation).
template <class T, class Aux>
LossResult<T> combined_step_loss(const Params<T>& p, std::span<const Example> sft_batch, std::span<const Aux> aux_batch,
                                 bool include_sft = true) {
  LossResult<T> aux;
  if constexpr (std::is_same_v<Aux, MixedExample>)
    aux = bash_loss(p, aux_batch);
  else
    aux = rac_loss(p, aux_batch);

  LossResult<T> out;
  if (include_sft) {
    out = sft_loss(p, sft_batch);
    out.grads += aux.grads;
  } else {
    out.loss = {0.0, 0, {{"sft", 0.0}}};
    out.grads = std::move(aux.grads);
  }
  const double sft_value = out.loss.value;
  out.loss.value = sft_value + aux.loss.value;
  out.loss.token_count += aux.loss.token_count;
  out.loss.components = {{"sft", sft_value}, {"aux", aux.loss.value}};
  return out;
}

}  // namespace bashrac
