#pragma once

// Training loops: SFT warmup, offline BASH and RAC iterations, and the
// online scheduled-sampling reference trainer.
//
// Every random choice is drawn from a stream keyed by the run seed, the
// global step at which the current phase started (the phase id) and the
// step or iteration inside the phase. Two runs with the same config and
// starting state therefore produce identical metrics and checkpoints.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bashrac/checkpoint.hpp"
#include "bashrac/config.hpp"
#include "bashrac/corpus.hpp"
#include "bashrac/losses.hpp"
#include "bashrac/mixing.hpp"
#include "bashrac/model.hpp"
#include "bashrac/optim.hpp"
#include "bashrac/rac.hpp"

namespace bashrac {

struct MetricsRow {
  std::int64_t step = 0;
  std::string phase;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_sft = 0.0;
  double loss_aux = 0.0;
  std::size_t unmasked_token_count = 0;
  double wall_ms = 0.0;
};

struct BuildRecord {
  std::string phase;  // "bash" or "rac"
  int iteration = 0;  // 1-based
  std::size_t items = 0;
  std::size_t skipped = 0;
  double wall_ms = 0.0;
  std::optional<std::filesystem::path> path;
};

struct RunRecord {
  std::vector<MetricsRow> rows;
  std::vector<BuildRecord> builds;
  std::vector<std::filesystem::path> checkpoints;
};

inline constexpr const char* kMetricsHeader =
    "step,phase,lr,loss_total,loss_sft,loss_aux,unmasked_token_count,wall_ms";

inline std::string metrics_line(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%s,%.9g,%.9g,%.9g,%.9g,%zu,%.3f", static_cast<long long>(r.step),
                r.phase.c_str(), r.lr, r.loss_total, r.loss_sft, r.loss_aux, r.unmasked_token_count, r.wall_ms);
  return buf;
}

inline void write_metrics(const std::filesystem::path& path, const RunRecord& rec) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << kMetricsHeader << '\n';
  for (const auto& r : rec.rows) out << metrics_line(r) << '\n';
}

template <class T>
struct TrainState {
  Params<T> params;
  RngState rng;  // seed and global step counter
  bool sft_warmed = false;
  RunRecord record;
  OptimizerState<T> opt;  // carried across phases unless reset_optimizer

  static TrainState fresh(const ModelConfig& model, std::uint64_t seed) {
    return {init_params<T>(model, seed), {seed, 0}, false, {}, {}};
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optional side channels of a run. Builders default to build_ds / build_dr;
/// tests substitute crafted offline datasets through them.
template <class T>
struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  std::function<std::vector<MixedExample>(const Params<T>&, const Dataset&, int iteration)> ds_builder;
  std::function<std::vector<RacExample>(const Params<T>&, const Dataset&, int iteration)> dr_builder;
};

/// Epoch-wise shuffled minibatches over [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed, std::string tag, std::uint64_t phase_id)
      : n_(n), seed_(seed), tag_(std::move(tag)), phase_id_(phase_id) {
    if (n == 0) throw std::invalid_argument("BatchSampler: empty dataset");
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == perm_.size()) {
        perm_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
        Rng rng = Rng::stream(seed_, tag_, phase_id_, epoch_++);
        rng.shuffle(std::span<std::size_t>(perm_));
        pos_ = 0;
      }
      out.push_back(perm_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::string tag_;
  std::uint64_t phase_id_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

/// Response cap for generated data: configured value, else longest
/// continuation + 2.
inline int response_cap(const TrainConfig& cfg, const Dataset& d) {
  if (cfg.max_new_tokens > 0) return cfg.max_new_tokens;
  std::size_t longest = 1;
  for (const auto& ex : d.examples) longest = std::max(longest, ex.continuation.size());
  return static_cast<int>(longest) + 2;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Per-phase bookkeeping shared by all loops.
template <class T>
class Phase {
 public:
  Phase(TrainState<T>& st, const TrainConfig& cfg, const Dataset& data, std::string name, std::int64_t total_steps,
        bool reset_optimizer, const RunOptions<T>& opts)
      : st_(st),
        cfg_(cfg),
        data_(data),
        name_(std::move(name)),
        total_(total_steps),
        phase_id_(st.rng.counter),
        sft_sampler_(data.size(), st.rng.seed, "sft-batches", phase_id_),
        opts_(opts) {
    if (reset_optimizer || st.opt.m.size() != st.params.size())
      st.opt = OptimizerState<T>(st.params.size(), AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  }

  std::uint64_t phase_id() const noexcept { return phase_id_; }
  std::int64_t step_in_phase() const noexcept { return k_; }

  /// SFT minibatch from the original dataset; each row is replaced by its
  /// reference-conditioned view with probability ref_prior_rate.
  std::vector<Example> sft_batch() {
    const auto idx = sft_sampler_.next(static_cast<std::size_t>(cfg_.batch_size));
    Rng rng = Rng::stream(st_.rng.seed, "ref-prior", phase_id_, static_cast<std::uint64_t>(k_));
    std::vector<Example> out;
    out.reserve(idx.size());
    for (auto i : idx) {
      const Example& ex = data_.examples[i];
      if (cfg_.ref_prior_rate > 0.0 && rng.bernoulli(cfg_.ref_prior_rate))
        out.push_back(reference_view(ex));
      else
        out.push_back(ex);
    }
    return out;
  }

  double lr() const { return learning_rate(cfg_.schedule, cfg_.lr, cfg_.lr_warmup_frac, k_, total_); }

  /// Applies one update and appends a metrics row.
  void apply(LossResult<T>& res, Clock::time_point t0) {
    if (!std::isfinite(res.loss.value)) diverged("non-finite loss");
    const double lr_now = lr();
    clip_grad_norm(res.grads, cfg_.grad_clip);
    try {
      optimizer_step(st_.params, res.grads, st_.opt, lr_now);
    } catch (const NonFiniteGradient& e) {
      diverged(e.what());
    }
    ++k_;
    ++st_.rng.counter;
    MetricsRow row;
    row.step = static_cast<std::int64_t>(st_.rng.counter);
    row.phase = name_;
    row.lr = lr_now;
    row.loss_total = res.loss.value;
    row.loss_sft = res.loss.component("sft");
    row.loss_aux = res.loss.component("aux");
    row.unmasked_token_count = res.loss.token_count;
    row.wall_ms = ms_since(t0);
    st_.record.rows.push_back(row);
  }

  void finish() {
    if (opts_.out_dir) {
      const auto path = *opts_.out_dir / (name_ + "_final.ckpt");
      save_checkpoint(path, st_.params, st_.rng, st_.sft_warmed ? kSftWarmed : 0u);
      st_.record.checkpoints.push_back(path);
    }
  }

 private:
  [[noreturn]] void diverged(const std::string& why) {
    std::string where;
    if (opts_.out_dir) {
      const auto path = *opts_.out_dir / "last_good.ckpt";
      save_checkpoint(path, st_.params, st_.rng, st_.sft_warmed ? kSftWarmed : 0u);
      st_.record.checkpoints.push_back(path);
      where = "; last good checkpoint at " + path.string();
    }
    throw TrainingDiverged(name_ + " step " + std::to_string(st_.rng.counter + 1) + ": " + why + where);
  }

  TrainState<T>& st_;
  const TrainConfig& cfg_;
  const Dataset& data_;
  std::string name_;
  std::int64_t total_;
  std::uint64_t phase_id_;
  BatchSampler sft_sampler_;
  const RunOptions<T>& opts_;
  std::int64_t k_ = 0;
};

template <class Item>
std::vector<Item> gather(std::span<const Item> items, const std::vector<std::size_t>& idx) {
  std::vector<Item> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

}  // namespace detail

/// `steps` SFT updates (defaults to K1). Marks the state as warmed once at
/// least one step has run.
template <class T>
void train_sft(TrainState<T>& st, const Dataset& data, const TrainConfig& cfg, const RunOptions<T>& opts = {},
               std::optional<int> steps = std::nullopt) {
  validate(cfg);
  if (data.empty()) throw std::invalid_argument("train_sft: empty dataset");
  const int total = steps.value_or(cfg.warmup_steps);
  detail::Phase<T> phase(st, cfg, data, "sft", total, true, opts);
  for (int k = 0; k < total; ++k) {
    const auto t0 = detail::Clock::now();
    const auto batch = phase.sft_batch();
    auto res = sft_loss(st.params, std::span<const Example>(batch));
    res.loss.components = {{"sft", res.loss.value}, {"aux", 0.0}};
    phase.apply(res, t0);
  }
  if (total > 0) st.sft_warmed = true;
  phase.finish();
}

namespace detail {

template <class T, class Aux>
void run_offline_phase(TrainState<T>& st, const Dataset& data, const TrainConfig& cfg, const RunOptions<T>& opts,
                       const std::string& name,
                       const std::function<std::vector<Aux>(const Params<T>&, int, BuildRecord&)>& build) {
  validate(cfg);
  if (data.empty()) throw std::invalid_argument("train_" + name + ": empty dataset");
  if (!st.sft_warmed) throw std::logic_error("train_" + name + ": parameters have not been SFT-warmed");
  const std::int64_t total = static_cast<std::int64_t>(cfg.outer_iterations) * cfg.inner_steps;
  Phase<T> phase(st, cfg, data, name, total, cfg.reset_optimizer, opts);
  for (int h = 1; h <= cfg.outer_iterations; ++h) {
    // Frozen snapshot: no update interleaves with the build.
    BuildRecord rec;
    rec.phase = name;
    rec.iteration = h;
    const auto t0 = Clock::now();
    const std::vector<Aux> aux = build(st.params, h, rec);
    rec.wall_ms = ms_since(t0);
    rec.items = aux.size();
    st.record.builds.push_back(rec);
    if (aux.empty()) throw BuildError(name + " iteration " + std::to_string(h) + ": empty offline dataset");

    BatchSampler aux_sampler(aux.size(), st.rng.seed, "aux-batches", phase.phase_id() * 1000003u + h);
    for (int k = 0; k < cfg.inner_steps; ++k) {
      const auto ts = Clock::now();
      const auto sft = cfg.include_sft_loss ? phase.sft_batch() : std::vector<Example>{};
      const auto aux_batch = gather(std::span<const Aux>(aux), aux_sampler.next(static_cast<std::size_t>(cfg.batch_size)));
      auto res = combined_step_loss<T, Aux>(st.params, std::span<const Example>(sft), std::span<const Aux>(aux_batch),
                                            cfg.include_sft_loss);
      phase.apply(res, ts);
    }
  }
  phase.finish();
}

}  // namespace detail

/// H iterations of {build D_s from the current params; K2 combined updates}.
template <class T>
void train_bash(TrainState<T>& st, const Dataset& data, const TrainConfig& cfg, const RunOptions<T>& opts = {}) {
  const std::uint64_t phase_id = st.rng.counter;
  std::function<std::vector<MixedExample>(const Params<T>&, int, BuildRecord&)> build =
      [&](const Params<T>& frozen, int h, BuildRecord& rec) {
        std::vector<MixedExample> ds;
        if (opts.ds_builder) {
          ds = opts.ds_builder(frozen, data, h);
        } else {
          const MixConfig mix{cfg.beta, cfg.gen_temperature, derive_seed(st.rng.seed, "ds", phase_id, h)};
          auto res = build_ds(frozen, data, mix, cfg.workers);
          rec.skipped = res.skipped.size();
          ds = std::move(res.items);
        }
        if (opts.out_dir) {
          rec.path = *opts.out_dir / ("ds_iter" + std::to_string(h) + ".jsonl");
          write_mixed(*rec.path, ds);
        }
        return ds;
      };
  detail::run_offline_phase<T, MixedExample>(st, data, cfg, opts, "bash", build);
}

/// H iterations of {D_r <- empty; sample z and label it for every example;
/// K2 combined updates}.
template <class T>
void train_rac(TrainState<T>& st, const Dataset& data, const TrainConfig& cfg, const RunOptions<T>& opts = {}) {
  const std::uint64_t phase_id = st.rng.counter;
  const auto gen = GenerationConfig::sampled(response_cap(cfg, data), cfg.gen_temperature);
  std::function<std::vector<RacExample>(const Params<T>&, int, BuildRecord&)> build =
      [&](const Params<T>& frozen, int h, BuildRecord& rec) {
        std::vector<RacExample> dr;
        if (opts.dr_builder) {
          dr = opts.dr_builder(frozen, data, h);
        } else {
          auto res = build_dr(frozen, data, gen, RacTemplate{}, derive_seed(st.rng.seed, "dr", phase_id, h),
                              cfg.workers);
          rec.skipped = res.skipped.size();
          dr = std::move(res.items);
        }
        if (opts.out_dir) {
          rec.path = *opts.out_dir / ("dr_iter" + std::to_string(h) + ".jsonl");
          write_rac(*rec.path, dr);
        }
        return dr;
      };
  detail::run_offline_phase<T, RacExample>(st, data, cfg, opts, "rac", build);
}

/// H * K2 updates, each mixing its own minibatch with the current params
/// before computing the loss. Same objective as BASH, but no offline data.
template <class T>
void train_scs_online(TrainState<T>& st, const Dataset& data, const TrainConfig& cfg, const RunOptions<T>& opts = {}) {
  validate(cfg);
  if (data.empty()) throw std::invalid_argument("train_scs_online: empty dataset");
  if (!st.sft_warmed) throw std::logic_error("train_scs_online: parameters have not been SFT-warmed");
  const std::int64_t total = static_cast<std::int64_t>(cfg.outer_iterations) * cfg.inner_steps;
  detail::Phase<T> phase(st, cfg, data, "scs", total, cfg.reset_optimizer, opts);
  BatchSampler aux_sampler(data.size(), st.rng.seed, "aux-batches", phase.phase_id() * 1000003u + 1);
  for (std::int64_t k = 0; k < total; ++k) {
    const auto ts = detail::Clock::now();
    const auto sft = cfg.include_sft_loss ? phase.sft_batch() : std::vector<Example>{};
    Dataset raw{data.task_name, data.seed,
                detail::gather(std::span<const Example>(data.examples),
                               aux_sampler.next(static_cast<std::size_t>(cfg.batch_size)))};
    const MixConfig mix{cfg.beta, cfg.gen_temperature,
                        derive_seed(st.rng.seed, "scs", phase.phase_id(), static_cast<std::uint64_t>(k))};
    const auto mixed = build_ds(st.params, raw, mix, 1).items;
    auto res = combined_step_loss<T, MixedExample>(st.params, std::span<const Example>(sft),
                                                   std::span<const MixedExample>(mixed), cfg.include_sft_loss);
    phase.apply(res, ts);
  }
  phase.finish();
}

/// Warmup (if the state is not yet warmed) followed by the configured mode.
/// In sft_only mode the run is the K1 warmup alone.
template <class T>
void run_training(TrainState<T>& st, const Dataset& data, const TrainConfig& cfg, const RunOptions<T>& opts = {}) {
  if (!st.sft_warmed || cfg.mode == TrainMode::sft_only) train_sft(st, data, cfg, opts);
  switch (cfg.mode) {
    case TrainMode::sft_only: break;
    case TrainMode::bash: train_bash(st, data, cfg, opts); break;
    case TrainMode::rac: train_rac(st, data, cfg, opts); break;
    case TrainMode::scs_online: train_scs_online(st, data, cfg, opts); break;
  }
}

}  // namespace bashrac
