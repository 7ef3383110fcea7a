#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include "bashrac/config.hpp"
#include "helpers.hpp"

using namespace bashrac;

namespace {

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

}  // namespace

TEST(Config, DefaultsAreValid) {
  const TrainConfig c;
  EXPECT_TRUE(c.problems().empty());
  EXPECT_EQ(c.warmup_steps, 300);
  EXPECT_EQ(c.inner_steps, 300);
  EXPECT_EQ(c.outer_iterations, 2);
  EXPECT_EQ(c.batch_size, 32);
  EXPECT_EQ(c.beta, 0.2);
  EXPECT_EQ(c.model.d_model, 64);
  EXPECT_EQ(c.model.vocab_size, 44);
}

TEST(Config, TextRoundTrip) {
  TrainConfig c;
  c.mode = TrainMode::rac;
  c.lr = 1.0 / 3.0;
  c.beta = 0.35;
  c.seed = 12345678901234ull;
  c.include_sft_loss = false;
  c.schedule = Schedule::constant;
  c.model.precision = Precision::f64;
  c.model.d_model = 32;
  const auto back = parse_config_text(config_text(c));
  EXPECT_EQ(config_text(back), config_text(c));
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.mode, TrainMode::rac);
  EXPECT_EQ(back.model, c.model);
}

TEST(Config, CommentsBlankLinesAndOverrides) {
  TrainConfig base;
  base.batch_size = 7;
  const auto c = parse_config_text("# header\n\n  beta = 0.5   # inline\r\nmode=bash\n", base);
  EXPECT_EQ(c.beta, 0.5);
  EXPECT_EQ(c.mode, TrainMode::bash);
  EXPECT_EQ(c.batch_size, 7);
}

TEST(Config, EveryBadKeyIsReportedTogether) {
  try {
    parse_config_text("lr = fast\nbogus = 1\nmode = dagger\nwarmup_steps = 1.5\nno equals sign\nbeta = 0.3\n");
    FAIL();
  } catch (const ConfigError& e) {
    const auto& p = e.problems();
    EXPECT_EQ(p.size(), 5u);
    EXPECT_TRUE(mentions(p, "lr"));
    EXPECT_TRUE(mentions(p, "bogus"));
    EXPECT_TRUE(mentions(p, "mode"));
    EXPECT_TRUE(mentions(p, "warmup_steps"));
    EXPECT_TRUE(mentions(p, "line 5"));
  }
}

TEST(Config, ValidationListsAllProblems) {
  TrainConfig c;
  c.lr = 0;
  c.beta = 1.5;
  c.batch_size = 0;
  c.workers = 0;
  c.model.n_heads = 3;
  try {
    validate(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 5u);
    EXPECT_TRUE(mentions(e.problems(), "beta"));
    EXPECT_TRUE(mentions(e.problems(), "divisible"));
  }
}

TEST(Config, IterationCountsOnlyCheckedOutsideSft) {
  TrainConfig c;
  c.inner_steps = 0;
  EXPECT_TRUE(c.problems().empty());
  c.mode = TrainMode::bash;
  EXPECT_TRUE(mentions(c.problems(), "inner_steps"));
}

TEST(Config, ReadFromFile) {
  const auto dir = testing_util::temp_dir("config");
  std::ofstream(dir / "c.txt") << "seed = 9\nmode = scs_online\n";
  const auto c = read_config(dir / "c.txt");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.mode, TrainMode::scs_online);
  EXPECT_THROW(read_config(dir / "none.txt"), std::runtime_error);
}
