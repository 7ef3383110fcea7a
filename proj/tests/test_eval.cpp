#include <gtest/gtest.h>

#include <cmath>

#include "bashrac/eval.hpp"
#include "helpers.hpp"
#include "rouge_golden.hpp"

using namespace bashrac;

namespace {

Params<float> noisy_model(std::uint64_t seed) {
  auto p = init_params<float>(testing_util::small_config(), seed);
  Rng rng(seed + 1);
  for (auto& v : p.values) v += static_cast<float>(0.4 * rng.normal());
  return p;
}

}  // namespace

TEST(Rouge, GoldenSet) {
  for (const auto& c : golden::kRougeCases) {
    EXPECT_NEAR(rouge_f1(c.candidate, c.reference, RougeOrder::one), c.r1, golden::kRougeTolerance) << c.candidate;
    EXPECT_NEAR(rouge_f1(c.candidate, c.reference, RougeOrder::two), c.r2, golden::kRougeTolerance) << c.candidate;
    EXPECT_NEAR(rouge_f1(c.candidate, c.reference, RougeOrder::L), c.rl, golden::kRougeTolerance) << c.candidate;
  }
}

TEST(Rouge, SymmetricUnderSwap) {
  const char* texts[] = {"a b c d e", "a c e", "b b a", "e d c b a a", "z"};
  for (const char* a : texts)
    for (const char* b : texts)
      for (auto o : {RougeOrder::one, RougeOrder::two, RougeOrder::L})
        EXPECT_NEAR(rouge_f1(a, b, o), rouge_f1(b, a, o), 1e-15);
}

TEST(Text, Helpers) {
  EXPECT_EQ(normalize_ws("  a \t b\n"), "a b");
  EXPECT_EQ(spaced("ace"), "a c e");
  const Tokens t{10, 11, Vocab::kEos, 12};
  EXPECT_EQ(until_eos(t).size(), 2u);
  EXPECT_EQ(spaced(until_eos(t)), "4 5");
  const Tokens s{Vocab::kSep, 6};
  EXPECT_EQ(spaced(s), "<SEP> 0");
}

TEST(Judge, TieConventionAndAntisymmetry) {
  EXPECT_EQ(judge_pair("addition", "42", "42", "42"), 0.5);
  EXPECT_EQ(judge_pair("addition", "42", "41", "42"), 1.0);
  EXPECT_EQ(judge_pair("addition", "41", "42", "42"), 0.0);
  EXPECT_EQ(judge_pair("addition", "40", "41", "42"), 0.5);
  const char* cands[] = {"ace", "acf", "a", "xyz", "aceg"};
  for (const char* a : cands)
    for (const char* b : cands) EXPECT_EQ(judge_pair("extract-s2", a, b, "ace") + judge_pair("extract-s2", b, a, "ace"), 1.0);
  EXPECT_EQ(judge_pair("copy", "abd", "abc", "abc"), 0.0);
}

TEST(Judge, WinRateConventions) {
  const std::vector<std::string> prompts{"p", "q", "r"}, oracle{"abc", "de", "f"};
  EXPECT_EQ(win_rate_of("copy", prompts, oracle, oracle, oracle), 0.5);
  const std::vector<std::string> corrupted{"xbc", "dx", "g"};
  EXPECT_EQ(win_rate_of("copy", prompts, oracle, corrupted, oracle), 1.0);
  EXPECT_EQ(win_rate_of("copy", prompts, corrupted, oracle, oracle), 0.0);
}

TEST(Judge, OracleAnswerUsesTask) {
  const Vocab v = Vocab::standard();
  const Example ex{"addition-000000", v.encode("17+25="), v.encode("99<EOS>")};  // stored continuation is wrong
  EXPECT_EQ(oracle_answer("addition", ex), "42");
  EXPECT_EQ(oracle_answer("mystery", ex), "99");
}

TEST(ExactMatch, UntrainedModelIsNearZeroOnAddition) {
  const auto p = init_params<float>(testing_util::small_config(), 0);
  const auto ds = gen_addition_task(200, 4, 1);
  const auto em = exact_match_rate(p, ds, GenerationConfig::sampled(8, 1.0), 3, 0);
  ASSERT_EQ(em.per_repeat.size(), 3u);
  EXPECT_LT(em.mean, 0.05);
  EXPECT_NEAR(em.mean, (em.per_repeat[0] + em.per_repeat[1] + em.per_repeat[2]) / 3, 1e-15);
}

TEST(ExactMatch, CountsOracleMatches) {
  const Vocab v = Vocab::standard();
  const auto ds = gen_addition_task(4, 2, 3);
  std::vector<Tokens> answers;
  for (const auto& ex : ds.examples) answers.push_back(v.encode(oracle_answer("addition", ex)));
  EXPECT_EQ(exact_match_of(ds, answers), 1.0);
  answers[1] = v.encode("x");
  answers[3].clear();
  EXPECT_EQ(exact_match_of(ds, answers), 0.5);
}

TEST(ExactMatch, GreedyIsDeterministicAndWorkerIndependent) {
  const auto p = noisy_model(1);
  const auto ds = gen_copy_task(30, 1, 6, false, 1);
  const auto a = generate_answers(p, ds, GenerationConfig::greedy(8), 0, 0, 1);
  const auto b = generate_answers(p, ds, GenerationConfig::greedy(8), 7, 2, 3);
  EXPECT_EQ(a, b);
  const auto s1 = generate_answers(p, ds, GenerationConfig::sampled(8, 1.0), 4, 0, 1);
  const auto s2 = generate_answers(p, ds, GenerationConfig::sampled(8, 1.0), 4, 0, 4);
  const auto s3 = generate_answers(p, ds, GenerationConfig::sampled(8, 1.0), 4, 1, 1);
  EXPECT_EQ(s1, s2);
  EXPECT_NE(s1, s3);
  for (const auto& ans : s1)
    for (TokenId t : ans) EXPECT_NE(t, Vocab::kEos);
}

TEST(Evaluate, ReportFieldsInRange) {
  const auto p = noisy_model(2);
  const auto ds = gen_extract_task(20, 2, 2);
  const auto rep = evaluate(p, ds, GenerationConfig::sampled(8, 0.7), 2, 0, "sft");
  EXPECT_EQ(rep.n_samples, 40u);
  EXPECT_EQ(rep.exact_match_per_repeat.size(), 2u);
  EXPECT_EQ(rep.mode, "sample");
  EXPECT_EQ(rep.temperature, 0.7);
  for (double v : {rep.exact_match, rep.rouge1, rep.rouge2, rep.rougeL, rep.win_rate}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto j = eval_record(rep);
  EXPECT_EQ(j["method"], "sft");
  EXPECT_EQ(j["task"], "extract-s2");
}

TEST(Distances, QuantilesInterpolate) {
  const std::vector<double> v{4, 1, 3, 2, 5};
  const auto q = summarize(v);
  EXPECT_EQ(q.min, 1);
  EXPECT_EQ(q.q1, 2);
  EXPECT_EQ(q.median, 3);
  EXPECT_EQ(q.q3, 4);
  EXPECT_EQ(q.max, 5);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(Distances, CosineDistance) {
  const std::vector<double> a{1, 0}, b{0, 2}, c{-3, 0}, z{0, 0};
  EXPECT_DOUBLE_EQ(cosine_distance(a, a), 0.0);
  EXPECT_DOUBLE_EQ(cosine_distance(a, b), 1.0);
  EXPECT_DOUBLE_EQ(cosine_distance(a, c), 2.0);
  EXPECT_EQ(cosine_distance(a, z), 1.0);
}

TEST(Distances, EmbeddingIsMeanOfResponseHiddenStates) {
  const auto p = noisy_model(3);
  const Tokens prompt{10, 11, Vocab::kSep}, resp{10, 11, Vocab::kEos};
  const auto e = response_embedding(p, prompt, resp);
  Workspace<float> ws(p.config);
  const Tokens all{Vocab::kBos, 10, 11, Vocab::kSep, 10, 11};
  extend(p, ws, std::span<const TokenId>(all));
  for (std::size_t k = 0; k < e.size(); ++k)
    EXPECT_NEAR(e[k], (double(ws.hidden(4)[k]) + double(ws.hidden(5)[k])) / 2, 1e-12);
  const auto zero = response_embedding(p, prompt, Tokens{Vocab::kEos});
  for (double v : zero) EXPECT_EQ(v, 0.0);
}

TEST(Distances, DistributionIsReproducibleAndConsistent) {
  const auto p = noisy_model(4);
  const Example ex{"copy-000003", {10, 11, 12, Vocab::kSep}, {10, 11, 12, Vocab::kEos}};
  const auto g = GenerationConfig::sampled(6, 0.7);
  const auto a = embedding_distance_distribution(p, ex, ex.continuation, 64, g, 1, 1);
  const auto b = embedding_distance_distribution(p, ex, ex.continuation, 64, g, 1, 3);
  EXPECT_EQ(a.distances, b.distances);
  EXPECT_EQ(a.distances.size(), 64u);
  for (double d : a.distances) EXPECT_GE(d, 0.0);
  EXPECT_LE(a.summary.min, a.summary.q1);
  EXPECT_LE(a.summary.q1, a.summary.median);
  EXPECT_LE(a.summary.median, a.summary.q3);
  EXPECT_LE(a.summary.q3, a.summary.max);
  EXPECT_EQ(a.summary.median, quantile(a.distances, 0.5));
  EXPECT_EQ(quartile_line("rac", a).rfind("rac,copy-000003,", 0), 0u);
  EXPECT_THROW(embedding_distance_distribution(p, ex, ex.continuation, 0, g, 1), std::invalid_argument);
}

TEST(Distances, SelfDistanceIsZero) {
  const auto p = noisy_model(5);
  const Tokens prompt{20, 21, Vocab::kSep};
  Rng rng(0);
  Tokens prefix{Vocab::kBos};
  prefix.insert(prefix.end(), prompt.begin(), prompt.end());
  const auto greedy = generate(p, std::span<const TokenId>(prefix), GenerationConfig::greedy(5), rng).tokens;
  const Example ex{"copy-000009", prompt, {20, 21, Vocab::kEos}};
  // Greedy samples all coincide with the reference chosen as the greedy answer.
  const auto d = embedding_distance_distribution(p, ex, greedy, 8, GenerationConfig::greedy(5), 0);
  for (double v : d.distances) EXPECT_NEAR(v, 0.0, 1e-12);
}
