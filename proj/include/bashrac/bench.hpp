#pragma once

// Cost of online scheduled sampling against BASH on matched minibatches.
// BASH pays for generation once per outer iteration (the offline build);
// its gradient steps only read the prebuilt mixed data. Online SCS
// generates inside every step.

#include <chrono>
#include <cstdint>
#include <span>
#include <vector>

#include "bashrac/config.hpp"
#include "bashrac/losses.hpp"
#include "bashrac/mixing.hpp"
#include "bashrac/optim.hpp"
#include "bashrac/trainer.hpp"

namespace bashrac {

struct BenchReport {
  std::size_t batch_size = 0;
  double build_ms = 0.0;             // one D_s build over the benchmark batches
  std::vector<double> bash_step_ms;  // per batch: loss + backward + update
  std::vector<double> scs_step_ms;   // per batch: mixing + loss + backward + update

  bool scs_slower_on_every_batch() const {
    for (std::size_t i = 0; i < bash_step_ms.size(); ++i)
      if (!(scs_step_ms[i] > bash_step_ms[i])) return false;
    return !bash_step_ms.empty();
  }
};

template <class T>
BenchReport bench_scs_vs_bash(const Params<T>& start, const Dataset& data, const TrainConfig& cfg, int n_batches) {
  validate(cfg);
  if (n_batches < 1) throw std::invalid_argument("bench: n_batches must be >= 1");
  using Clock = std::chrono::steady_clock;
  const auto ms = [](Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };

  BatchSampler sampler(data.size(), cfg.seed, "bench", 0);
  std::vector<Dataset> batches;
  for (int b = 0; b < n_batches; ++b) {
    Dataset d{data.task_name, data.seed, {}};
    for (auto i : sampler.next(static_cast<std::size_t>(cfg.batch_size))) d.examples.push_back(data.examples[i]);
    batches.push_back(std::move(d));
  }

  BenchReport rep;
  rep.batch_size = static_cast<std::size_t>(cfg.batch_size);
  const AdamWConfig hyper{0.9, 0.999, 1e-8, cfg.weight_decay};

  // The offline build is timed separately; steps then consume it.
  std::vector<std::vector<MixedExample>> offline;
  const auto t_build = Clock::now();
  for (int b = 0; b < n_batches; ++b) {
    const MixConfig mix{cfg.beta, cfg.gen_temperature, derive_seed(cfg.seed, "bench-ds", b)};
    offline.push_back(build_ds(start, batches[static_cast<std::size_t>(b)], mix, cfg.workers).items);
  }
  rep.build_ms = ms(t_build);

  Params<T> bash = start, scs = start;
  OptimizerState<T> bash_opt(start.size(), hyper), scs_opt(start.size(), hyper);
  for (int b = 0; b < n_batches; ++b) {
    const auto& batch = batches[static_cast<std::size_t>(b)];
    const std::span<const Example> sft(batch.examples);
    {
      const auto t0 = Clock::now();
      auto res = combined_step_loss<T, MixedExample>(bash, sft, std::span<const MixedExample>(offline[static_cast<std::size_t>(b)]),
                                                     cfg.include_sft_loss);
      clip_grad_norm(res.grads, cfg.grad_clip);
      optimizer_step(bash, res.grads, bash_opt, cfg.lr);
      rep.bash_step_ms.push_back(ms(t0));
    }
    {
      const auto t0 = Clock::now();
      const MixConfig mix{cfg.beta, cfg.gen_temperature, derive_seed(cfg.seed, "bench-scs", b)};
      const auto mixed = build_ds(scs, batch, mix, 1).items;
      auto res = combined_step_loss<T, MixedExample>(scs, sft, std::span<const MixedExample>(mixed), cfg.include_sft_loss);
      clip_grad_norm(res.grads, cfg.grad_clip);
      optimizer_step(scs, res.grads, scs_opt, cfg.lr);
      rep.scs_step_ms.push_back(ms(t0));
    }
  }
  return rep;
}

inline Json bench_record(const BenchReport& r) {
  Json j;
  j["batch_size"] = r.batch_size;
  j["build_ms"] = r.build_ms;
  j["bash_step_ms"] = r.bash_step_ms;
  j["scs_step_ms"] = r.scs_step_ms;
  j["scs_slower_on_every_batch"] = r.scs_slower_on_every_batch();
  return j;
}

}  // namespace bashrac
