#include <gtest/gtest.h>

#include "bashrac/rac.hpp"
#include "helpers.hpp"

using namespace bashrac;

namespace {

Params<float> noisy_model(std::uint64_t seed) {
  auto p = init_params<float>(testing_util::small_config(), seed);
  Rng rng(seed + 1);
  for (auto& v : p.values) v += static_cast<float>(0.4 * rng.normal());
  return p;
}

}  // namespace

TEST(Rac, PromptLayout) {
  const Tokens x{10, 11, Vocab::kSep}, y{12, 13, Vocab::kEos};
  EXPECT_EQ(build_rac_prompt(x, y), (Tokens{Vocab::kBos, 10, 11, Vocab::kSep, Vocab::kRefBegin, 12, 13, Vocab::kRefEnd}));
  EXPECT_THROW(build_rac_prompt(x, y, {}, 8, 1), ContextOverflow);
  EXPECT_NO_THROW(build_rac_prompt(x, y, {}, 8, 0));
  RacTemplate t;
  t.ref_begin = Vocab::kSep;
  EXPECT_EQ(build_rac_prompt(x, y, t)[4], Vocab::kSep);
}

TEST(Rac, ReferenceViewMatchesPromptLayout) {
  const Example ex{"copy-000001", {10, 11, Vocab::kSep}, {10, 11, Vocab::kEos}};
  const auto v = reference_view(ex);
  Tokens with_bos{Vocab::kBos};
  with_bos.insert(with_bos.end(), v.prompt.begin(), v.prompt.end());
  EXPECT_EQ(with_bos, build_rac_prompt(ex.prompt, ex.continuation));
  EXPECT_EQ(v.continuation, ex.continuation);
  EXPECT_NE(v.id, ex.id);
  EXPECT_NO_THROW(validate_example(v));
}

TEST(Rac, LabelsAreGreedyUnderReferenceContext) {
  const auto p = noisy_model(1);
  const Tokens x{20, 21, 22, Vocab::kSep}, y{20, 21, 22, Vocab::kEos}, z{20, 30, 22, 7, Vocab::kEos};
  const auto lab = gen_rac_labels(p, x, y, z);
  Tokens seq = build_rac_prompt(x, y);
  ASSERT_EQ(lab.labels.size(), z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    const auto logits = forward(p, std::span<const TokenId>(seq));
    const TokenId want = argmax(logits.row(seq.size() - 1));
    EXPECT_EQ(lab.labels[j], want);
    EXPECT_EQ(lab.mask[j], want != z[j] ? 1 : 0);
    seq.push_back(z[j]);
  }
}

TEST(Rac, ResponseEqualToGreedyCorrectionHasEmptyMask) {
  const auto p = noisy_model(2);
  const Tokens x{15, 16, Vocab::kSep}, y{15, 16, Vocab::kEos};
  // Greedy continuation under the reference prompt agrees with itself.
  const Tokens prompt = build_rac_prompt(x, y);
  Rng rng(0);
  const auto z = generate(p, std::span<const TokenId>(prompt), GenerationConfig::greedy(6), rng).tokens;
  const auto lab = gen_rac_labels(p, x, y, z);
  EXPECT_EQ(lab.labels, z);
  for (auto m : lab.mask) EXPECT_EQ(m, 0);
  EXPECT_THROW(gen_rac_labels(p, x, y, Tokens{}), std::invalid_argument);
}

TEST(Rac, BuildIsSeededAndWorkerIndependent) {
  const auto p = noisy_model(3);
  const auto ds = gen_copy_task(25, 1, 6, false, 3);
  const auto gen = GenerationConfig::sampled(9, 1.0);
  const auto a = build_dr(p, ds, gen, RacTemplate{}, 5, 1);
  const auto b = build_dr(p, ds, gen, RacTemplate{}, 5, 4);
  EXPECT_EQ(a.items, b.items);
  ASSERT_EQ(a.items.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = a.items[i];
    EXPECT_EQ(r.example, ds.examples[i]);
    ASSERT_FALSE(r.response.empty());
    EXPECT_LE(r.response.size(), 9u);
    // response replays from the example's own stream
    Rng rng = Rng::stream(5, "rac", r.example.id);
    Tokens prefix{Vocab::kBos};
    prefix.insert(prefix.end(), r.example.prompt.begin(), r.example.prompt.end());
    EXPECT_EQ(r.response, generate(p, std::span<const TokenId>(prefix), gen, rng).tokens);
    EXPECT_EQ(r.labels, gen_rac_labels(p, r.example.prompt, r.example.continuation, r.response).labels);
  }
  EXPECT_NE(build_dr(p, ds, gen, RacTemplate{}, 6, 1).items, a.items);
}

TEST(Rac, RecordsRoundTripAndValidate) {
  const auto p = noisy_model(4);
  const auto ds = gen_copy_task(8, 2, 5, true, 4);
  const auto res = build_dr(p, ds, GenerationConfig::sampled(8, 1.0), RacTemplate{}, 2);
  const auto dir = testing_util::temp_dir("rac_io");
  write_rac(dir / "dr.jsonl", std::span<const RacExample>(res.items));
  EXPECT_EQ(read_rac(dir / "dr.jsonl"), res.items);

  auto rec = rac_record(res.items[0], Vocab::standard());
  rec["mask"][0] = 1 - rec["mask"][0].get<int>();
  write_records(dir / "bad.jsonl", {rec});
  EXPECT_THROW(read_rac(dir / "bad.jsonl"), DatasetFormatError);
  rec = rac_record(res.items[0], Vocab::standard());
  rec["rac_label_ids"].push_back(7);
  write_records(dir / "bad2.jsonl", {rec});
  EXPECT_THROW(read_rac(dir / "bad2.jsonl"), DatasetFormatError);
}

TEST(Rac, OverlongReferencePromptIsSkipped) {
  const auto p = noisy_model(5);  // context 48
  auto ds = gen_copy_task(200, 1, 4, false, 5);
  ds.examples[3].prompt = Tokens(24, 10);  // 1 + 25 + 22 fits, the reference prompt (49) does not
  ds.examples[3].prompt.push_back(Vocab::kSep);
  ds.examples[3].continuation = Tokens(21, 10);
  ds.examples[3].continuation.push_back(Vocab::kEos);
  const auto res = build_dr(p, ds, GenerationConfig::sampled(6, 1.0), RacTemplate{}, 0);
  EXPECT_EQ(res.items.size(), 199u);
  EXPECT_EQ(res.skipped.size(), 1u);
}
