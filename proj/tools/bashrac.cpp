// bashrac: corpus generation, training, offline builds, evaluation,
// sampling, distance analysis and the SCS/BASH benchmark.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bashrac/bench.hpp"
#include "bashrac/checkpoint.hpp"
#include "bashrac/config.hpp"
#include "bashrac/corpus.hpp"
#include "bashrac/eval.hpp"
#include "bashrac/mixing.hpp"
#include "bashrac/rac.hpp"
#include "bashrac/sampler.hpp"
#include "bashrac/trainer.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using namespace bashrac;
using bashrac::cli::RunManifest;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

// Raised for bad user input that is not covered by a library exception.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void fail_line(const char* kind, const std::string& msg) {
  nlohmann::ordered_json j{{"error", kind}, {"message", msg}};
  std::cerr << j.dump() << '\n';
}

struct Common {
  std::uint64_t seed = 0;
  int workers = 1;
  bool seed_set = false;
};

/// flag > file > default.
struct ConfigSources {
  std::string path;
  std::vector<std::string> sets;  // key=value overrides

  TrainConfig resolve(const Common& c, std::vector<std::pair<std::string, std::string>> flags = {}) const {
    TrainConfig cfg = path.empty() ? TrainConfig{} : read_config(path);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      flags.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed_set) flags.emplace_back("seed", std::to_string(c.seed));
    if (c.workers != 1) flags.emplace_back("workers", std::to_string(c.workers));
    std::vector<std::string> errors;
    for (const auto& [k, v] : flags)
      if (auto e = set_config_value(cfg, k, v); !e.empty()) errors.push_back(e);
    if (!errors.empty()) throw ConfigError(std::move(errors));
    validate(cfg);
    return cfg;
  }
};

/// Runs fn with the checkpoint's parameters at the checkpoint's precision.
template <class Fn>
void with_checkpoint(const fs::path& path, Fn&& fn) {
  auto ck = load_checkpoint<float>(path);
  if (ck.params.config.precision == Precision::f64) {
    Checkpoint<double> d{ck.params.template cast<double>(), ck.rng, ck.flags};
    fn(d);
  } else {
    fn(ck);
  }
}

fs::path sibling(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

int max_tokens_for(int flag, const Dataset& d) {
  if (flag > 0) return flag;
  std::size_t longest = 1;
  for (const auto& ex : d.examples) longest = std::max(longest, ex.continuation.size());
  return static_cast<int>(longest) + 2;
}

GenerationConfig gen_from(bool greedy, double temperature, int k) {
  return greedy ? GenerationConfig::greedy(k) : GenerationConfig::sampled(k, temperature);
}

// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  std::string task = "copy";
  std::size_t n = 128;
  int min_len = 1, max_len = 16, max_digits = 4;
  std::size_t held_out = 0;
  std::string out, held_out_out;
};

void cmd_gen_corpus(const GenCorpusArgs& a, const Common& c) {
  const TaskSpec spec = TaskSpec::parse(a.task);
  Dataset ds;
  switch (spec.kind) {
    case TaskSpec::Kind::copy: ds = gen_copy_task(a.n, a.min_len, a.max_len, false, c.seed); break;
    case TaskSpec::Kind::reverse: ds = gen_copy_task(a.n, a.min_len, a.max_len, true, c.seed); break;
    case TaskSpec::Kind::addition: ds = gen_addition_task(a.n, a.max_digits, c.seed); break;
    case TaskSpec::Kind::extract: ds = gen_extract_task(a.n, spec.stride, c.seed); break;
  }
  RunManifest m;
  m.command = "gen-corpus";
  m.config = "task = " + a.task + "\nn = " + std::to_string(a.n) + "\nmin_len = " + std::to_string(a.min_len) +
             "\nmax_len = " + std::to_string(a.max_len) + "\nmax_digits = " + std::to_string(a.max_digits) +
             "\nheld_out = " + std::to_string(a.held_out) + "\nseed = " + std::to_string(c.seed) + "\n";
  ensure_parent(a.out);
  if (a.held_out > 0) {
    if (a.held_out_out.empty()) throw UsageError("--held-out requires --held-out-out");
    auto [train, test] = split_dataset(ds, a.held_out);
    write_dataset(a.out, train);
    ensure_parent(a.held_out_out);
    write_dataset(a.held_out_out, test);
    m.add_output(a.out);
    m.add_output(a.held_out_out);
  } else {
    write_dataset(a.out, ds);
    m.add_output(a.out);
  }
  m.write(sibling(a.out, ".manifest.json"));
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  ConfigSources cfg;
  std::string mode, data, out, init;
  std::optional<double> lr, beta;
  std::optional<int> warmup_steps, inner_steps, outer_iterations, batch_size;
  std::optional<bool> include_sft_loss;
};

template <class T>
void run_train(TrainState<T>& st, const Dataset& data, const TrainConfig& cfg, const fs::path& out, RunManifest& m) {
  RunOptions<T> opts;
  opts.out_dir = out;
  std::optional<std::string> failure;
  try {
    run_training(st, data, cfg, opts);
  } catch (const TrainingDiverged& e) {
    failure = e.what();
  }
  write_metrics(out / "metrics.csv", st.record);
  m.add_output(out / "metrics.csv", true);
  if (!failure) {
    save_checkpoint(out / "final.ckpt", st.params, st.rng, st.sft_warmed ? kSftWarmed : 0u);
    st.record.checkpoints.push_back(out / "final.ckpt");
  }
  for (const auto& b : st.record.builds)
    if (b.path) m.add_output(*b.path);
  for (const auto& p : st.record.checkpoints) m.add_output(p);
  m.write(out / "manifest.json");
  if (failure) throw std::runtime_error(*failure);
}

void cmd_train(const TrainArgs& a, const Common& c) {
  std::vector<std::pair<std::string, std::string>> flags;
  if (!a.mode.empty()) flags.emplace_back("mode", a.mode);
  auto num = [&](const char* k, const auto& v) {
    if (v) flags.emplace_back(k, detail::fmt_double(static_cast<double>(*v)));
  };
  auto integer = [&](const char* k, const std::optional<int>& v) {
    if (v) flags.emplace_back(k, std::to_string(*v));
  };
  num("lr", a.lr);
  num("beta", a.beta);
  integer("warmup_steps", a.warmup_steps);
  integer("inner_steps", a.inner_steps);
  integer("outer_iterations", a.outer_iterations);
  integer("batch_size", a.batch_size);
  if (a.include_sft_loss) flags.emplace_back("include_sft_loss", *a.include_sft_loss ? "true" : "false");
  TrainConfig cfg = a.cfg.resolve(c, flags);

  const Dataset data = read_dataset(a.data);
  const fs::path out = a.out;
  fs::create_directories(out);
  RunManifest m;
  m.command = "train";
  m.add_input(a.data);
  if (!a.cfg.path.empty()) m.add_input(a.cfg.path);

  auto go = [&]<class T>(TrainState<T> st) {
    cfg.model = st.params.config;
    m.config = config_text(cfg);
    {
      std::ofstream f(out / "config.txt", std::ios::binary | std::ios::trunc);
      f << m.config;
    }
    m.add_output(out / "config.txt");
    run_train(st, data, cfg, out, m);
  };

  if (!a.init.empty()) {
    m.add_input(a.init);
    with_checkpoint(a.init, [&]<class T>(Checkpoint<T>& ck) {
      TrainState<T> st{std::move(ck.params), {cfg.seed, ck.rng.counter}, ck.sft_warmed(), {}, {}};
      go(std::move(st));
    });
  } else if (cfg.model.precision == Precision::f64) {
    go(TrainState<double>::fresh(cfg.model, cfg.seed));
  } else {
    go(TrainState<float>::fresh(cfg.model, cfg.seed));
  }
}

// ---------------------------------------------------------------------------

struct BuildArgs {
  ConfigSources cfg;
  std::string kind, checkpoint, data, out;
  std::optional<double> beta, temperature;
  int max_new_tokens = 0;
};

void cmd_build(const BuildArgs& a, const Common& c) {
  std::vector<std::pair<std::string, std::string>> flags;
  if (a.beta) flags.emplace_back("beta", detail::fmt_double(*a.beta));
  if (a.temperature) flags.emplace_back("gen_temperature", detail::fmt_double(*a.temperature));
  if (a.max_new_tokens > 0) flags.emplace_back("max_new_tokens", std::to_string(a.max_new_tokens));
  const TrainConfig cfg = a.cfg.resolve(c, flags);
  const Dataset data = read_dataset(a.data);
  ensure_parent(a.out);
  RunManifest m;
  m.command = "build " + a.kind;
  m.config = config_text(cfg);
  m.add_input(a.checkpoint);
  m.add_input(a.data);
  if (!a.cfg.path.empty()) m.add_input(a.cfg.path);
  with_checkpoint(a.checkpoint, [&]<class T>(Checkpoint<T>& ck) {
    if (a.kind == "ds") {
      const MixConfig mix{cfg.beta, cfg.gen_temperature, derive_seed(cfg.seed, "ds")};
      const auto res = build_ds(ck.params, data, mix, cfg.workers);
      write_mixed(a.out, res.items);
    } else {
      const auto gen = GenerationConfig::sampled(response_cap(cfg, data), cfg.gen_temperature);
      const auto res = build_dr(ck.params, data, gen, RacTemplate{}, derive_seed(cfg.seed, "dr"), cfg.workers);
      write_rac(a.out, res.items);
    }
  });
  m.add_output(a.out);
  m.write(sibling(a.out, ".manifest.json"));
}

// ---------------------------------------------------------------------------

struct GenFlags {
  bool greedy = false;
  double temperature = 1.0;
  int max_new_tokens = 0;
};

struct EvalArgs {
  std::string checkpoint, data, out, method = "model", metrics = "all";
  GenFlags gen;
  int repeats = 1;
};

void cmd_eval(const EvalArgs& a, const Common& c) {
  const Dataset data = read_dataset(a.data);
  if (a.repeats < 1) throw UsageError("--repeats must be >= 1");
  const auto gen = gen_from(a.gen.greedy, a.gen.temperature, max_tokens_for(a.gen.max_new_tokens, data));
  gen.validate();
  if (a.metrics != "all" && a.metrics != "em" && a.metrics != "rouge" && a.metrics != "win")
    throw UsageError("--metrics must be one of all, em, rouge, win");
  ensure_parent(a.out);
  EvalReport rep;
  with_checkpoint(a.checkpoint,
                  [&]<class T>(Checkpoint<T>& ck) { rep = evaluate(ck.params, data, gen, a.repeats, c.seed, a.method, c.workers); });
  Json j = eval_record(rep);
  if (a.metrics == "em") {
    j.erase("rouge1"), j.erase("rouge2"), j.erase("rougeL"), j.erase("win_rate");
  } else if (a.metrics == "rouge") {
    j.erase("exact_match"), j.erase("exact_match_per_repeat"), j.erase("win_rate");
  } else if (a.metrics == "win") {
    j.erase("exact_match"), j.erase("exact_match_per_repeat"), j.erase("rouge1"), j.erase("rouge2"), j.erase("rougeL");
  }
  write_records(a.out, {j});
  RunManifest m;
  m.command = "eval";
  m.config = "metrics = " + a.metrics + "\nmethod = " + a.method + "\nmode = " + rep.mode +
             "\ntemperature = " + detail::fmt_double(rep.temperature) + "\nmax_new_tokens = " +
             std::to_string(gen.max_new_tokens) + "\nrepeats = " + std::to_string(a.repeats) +
             "\nseed = " + std::to_string(c.seed) + "\n";
  m.add_input(a.checkpoint);
  m.add_input(a.data);
  m.add_output(a.out);
  m.write(sibling(a.out, ".manifest.json"));
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string checkpoint, prompt, manifest;
  GenFlags gen;
};

void cmd_sample(const SampleArgs& a, const Common& c) {
  const Vocab vocab = Vocab::standard();
  const Tokens x = vocab.encode(a.prompt);
  if (x.empty()) throw UsageError("empty prompt");
  std::string text;
  with_checkpoint(a.checkpoint, [&]<class T>(Checkpoint<T>& ck) {
    Tokens prefix{Vocab::kBos};
    prefix.insert(prefix.end(), x.begin(), x.end());
    const int room = ck.params.config.context_len - static_cast<int>(prefix.size());
    if (room < 1) throw UsageError("prompt does not fit in the context");
    const int k = a.gen.max_new_tokens > 0 ? a.gen.max_new_tokens : std::min(room, 32);
    const auto gen = gen_from(a.gen.greedy, a.gen.temperature, k);
    Rng rng = Rng::stream(c.seed, "sample");
    const auto r = generate(ck.params, std::span<const TokenId>(prefix), gen, rng);
    text = vocab.decode(until_eos(r.tokens));
  });
  std::cout << text << '\n';
  if (!a.manifest.empty()) {
    RunManifest m;
    m.command = "sample";
    m.config = "prompt = " + a.prompt + "\ngreedy = " + (a.gen.greedy ? "true" : "false") +
               "\ntemperature = " + detail::fmt_double(a.gen.temperature) + "\nseed = " + std::to_string(c.seed) + "\n";
    m.add_input(a.checkpoint);
    ensure_parent(a.manifest);
    m.write(a.manifest);
  }
}

// ---------------------------------------------------------------------------

struct DistanceArgs {
  std::string checkpoint, prompts, out, quartiles, method = "model";
  int n = 256;
  double temperature = 0.7;
  int max_new_tokens = 0;
};

void cmd_distances(const DistanceArgs& a, const Common& c) {
  const Dataset data = read_dataset(a.prompts);
  if (a.n < 1) throw UsageError("--n must be >= 1");
  const auto gen = GenerationConfig::sampled(max_tokens_for(a.max_new_tokens, data), a.temperature);
  gen.validate();
  ensure_parent(a.out);
  const fs::path qpath = a.quartiles.empty() ? sibling(a.out, ".quartiles.csv") : fs::path(a.quartiles);
  std::vector<Json> records;
  std::string table = std::string(kQuartileHeader) + "\n";
  with_checkpoint(a.checkpoint, [&]<class T>(Checkpoint<T>& ck) {
    for (const auto& ex : data.examples) {
      const auto d = embedding_distance_distribution(ck.params, ex, std::span<const TokenId>(ex.continuation), a.n, gen,
                                                     c.seed, c.workers);
      records.push_back(distance_record(d, a.method));
      table += quartile_line(a.method, d) + "\n";
    }
  });
  write_records(a.out, records);
  ensure_parent(qpath);
  {
    std::ofstream q(qpath, std::ios::binary | std::ios::trunc);
    if (!q) throw std::runtime_error("cannot open " + qpath.string());
    q << table;
  }
  RunManifest m;
  m.command = "distances";
  m.config = "n = " + std::to_string(a.n) + "\ntemperature = " + detail::fmt_double(a.temperature) +
             "\nmethod = " + a.method + "\nseed = " + std::to_string(c.seed) + "\n";
  m.add_input(a.checkpoint);
  m.add_input(a.prompts);
  m.add_output(a.out);
  m.add_output(qpath);
  m.write(sibling(a.out, ".manifest.json"));
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  ConfigSources cfg;
  std::string checkpoint, data, out;
  int batches = 5;
};

void cmd_bench(const BenchArgs& a, const Common& c) {
  const TrainConfig cfg = a.cfg.resolve(c);
  const Dataset data = read_dataset(a.data);
  BenchReport rep;
  with_checkpoint(a.checkpoint, [&]<class T>(Checkpoint<T>& ck) { rep = bench_scs_vs_bash(ck.params, data, cfg, a.batches); });
  const Json j = bench_record(rep);
  std::cout << j.dump() << '\n';
  if (!a.out.empty()) {
    ensure_parent(a.out);
    write_records(a.out, {j});
    RunManifest m;
    m.command = "bench";
    m.config = config_text(cfg) + "batches = " + std::to_string(a.batches) + "\n";
    m.add_input(a.checkpoint);
    m.add_input(a.data);
    if (!a.cfg.path.empty()) m.add_input(a.cfg.path);
    m.add_output(a.out, true);
    m.write(sibling(a.out, ".manifest.json"));
  }
}

void add_config_flags(CLI::App* sub, ConfigSources& s) {
  sub->add_option("--config", s.path, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", s.sets, "override one config key (key=value), repeatable");
}

void add_gen_flags(CLI::App* sub, GenFlags& g) {
  sub->add_flag("--greedy", g.greedy, "greedy decoding");
  sub->add_option("--temperature", g.temperature, "sampling temperature");
  sub->add_option("--max-new-tokens", g.max_new_tokens, "response cap (0: longest reference + 2)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BASH / RAC training laboratory"};
  app.require_subcommand(1);
  Common common;
  auto* seed_opt = app.add_option("--seed", common.seed, "root seed for every random stream");
  app.add_option("--workers", common.workers, "fan-out of build and eval phases")->check(CLI::PositiveNumber);
  app.fallthrough();

  GenCorpusArgs gc;
  auto* s_gen = app.add_subcommand("gen-corpus", "generate a synthetic task dataset");
  s_gen->add_option("--task", gc.task, "copy | reverse | addition | extract-s<k>");
  s_gen->add_option("--n", gc.n, "number of examples");
  s_gen->add_option("--min-len", gc.min_len);
  s_gen->add_option("--max-len", gc.max_len);
  s_gen->add_option("--max-digits", gc.max_digits);
  s_gen->add_option("--held-out", gc.held_out, "move the last N examples to --held-out-out");
  s_gen->add_option("--held-out-out", gc.held_out_out);
  s_gen->add_option("--out", gc.out)->required();

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "SFT warmup followed by the configured mode");
  add_config_flags(s_train, tr.cfg);
  s_train->add_option("--mode", tr.mode, "sft_only | bash | rac | scs_online");
  s_train->add_option("--data", tr.data)->required()->check(CLI::ExistingFile);
  s_train->add_option("--out", tr.out, "output directory")->required();
  s_train->add_option("--init", tr.init, "start from this checkpoint")->check(CLI::ExistingFile);
  s_train->add_option("--lr", tr.lr);
  s_train->add_option("--beta", tr.beta);
  s_train->add_option("--warmup-steps", tr.warmup_steps);
  s_train->add_option("--inner-steps", tr.inner_steps);
  s_train->add_option("--outer-iterations", tr.outer_iterations);
  s_train->add_option("--batch-size", tr.batch_size);
  s_train->add_option("--include-sft-loss", tr.include_sft_loss);

  BuildArgs bd;
  auto* s_build = app.add_subcommand("build", "build one offline dataset (ds or dr)");
  s_build->add_option("kind", bd.kind)->required()->check(CLI::IsMember({"ds", "dr"}));
  add_config_flags(s_build, bd.cfg);
  s_build->add_option("--checkpoint", bd.checkpoint)->required()->check(CLI::ExistingFile);
  s_build->add_option("--data", bd.data)->required()->check(CLI::ExistingFile);
  s_build->add_option("--out", bd.out)->required();
  s_build->add_option("--beta", bd.beta);
  s_build->add_option("--temperature", bd.temperature);
  s_build->add_option("--max-new-tokens", bd.max_new_tokens);

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "exact match, Rouge and win rate on a dataset");
  s_eval->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  s_eval->add_option("--data", ev.data)->required()->check(CLI::ExistingFile);
  s_eval->add_option("--out", ev.out)->required();
  s_eval->add_option("--metrics", ev.metrics, "all | em | rouge | win");
  s_eval->add_option("--method", ev.method, "label stored in the report");
  s_eval->add_option("--repeats", ev.repeats, "generations per prompt");
  add_gen_flags(s_eval, ev.gen);

  SampleArgs sa;
  auto* s_sample = app.add_subcommand("sample", "decode one continuation to stdout");
  s_sample->add_option("--checkpoint", sa.checkpoint)->required()->check(CLI::ExistingFile);
  s_sample->add_option("--prompt", sa.prompt, "prompt text, e.g. 12+34=")->required();
  s_sample->add_option("--manifest", sa.manifest, "write a run manifest here");
  add_gen_flags(s_sample, sa.gen);

  DistanceArgs di;
  auto* s_dist = app.add_subcommand("distances", "embedding-distance distributions per prompt");
  s_dist->add_option("--checkpoint", di.checkpoint)->required()->check(CLI::ExistingFile);
  s_dist->add_option("--prompts", di.prompts, "dataset file; continuations are the references")
      ->required()
      ->check(CLI::ExistingFile);
  s_dist->add_option("--out", di.out)->required();
  s_dist->add_option("--quartiles", di.quartiles, "CSV summary path (default <out>.quartiles.csv)");
  s_dist->add_option("--method", di.method);
  s_dist->add_option("--n", di.n, "samples per prompt");
  s_dist->add_option("--temperature", di.temperature);
  s_dist->add_option("--max-new-tokens", di.max_new_tokens);

  BenchArgs be;
  auto* s_bench = app.add_subcommand("bench", "per-step wall time of online SCS vs BASH");
  add_config_flags(s_bench, be.cfg);
  s_bench->add_option("--checkpoint", be.checkpoint)->required()->check(CLI::ExistingFile);
  s_bench->add_option("--data", be.data)->required()->check(CLI::ExistingFile);
  s_bench->add_option("--batches", be.batches);
  s_bench->add_option("--out", be.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("validation", e.what());
    return kExitValidation;
  }
  common.seed_set = seed_opt->count() > 0;

  try {
    if (*s_gen) cmd_gen_corpus(gc, common);
    if (*s_train) cmd_train(tr, common);
    if (*s_build) cmd_build(bd, common);
    if (*s_eval) cmd_eval(ev, common);
    if (*s_sample) cmd_sample(sa, common);
    if (*s_dist) cmd_distances(di, common);
    if (*s_bench) cmd_bench(be, common);
  } catch (const ConfigError& e) {
    fail_line("validation", e.what());
    return kExitValidation;
  } catch (const DatasetFormatError& e) {
    fail_line("validation", e.what());
    return kExitValidation;
  } catch (const CheckpointError& e) {
    fail_line("validation", e.what());
    return kExitValidation;
  } catch (const VocabError& e) {
    fail_line("validation", e.what());
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    fail_line("validation", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    fail_line("runtime", e.what());
    return kExitRuntime;
  }
  return 0;
}
