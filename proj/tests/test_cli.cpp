#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <string>

#include <json.hpp>

#include "bashrac/corpus.hpp"
#include "bashrac/mixing.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kTiny = " --set n_layers=1 --set n_heads=2 --set d_model=16 --set d_ff=32 --set context_len=48";

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(BASHRAC_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testing_util::slurp(out);
  r.err = testing_util::slurp(err);
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = testing_util::temp_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    ASSERT_EQ(run("gen-corpus --task copy --n 40 --min-len 1 --max-len 4 --held-out 10 --held-out-out " +
                      (dir / "test.jsonl").string() + " --out " + (dir / "train.jsonl").string(),
                  dir)
                  .code,
              0);
  }

  std::string train_args(const std::string& out, const std::string& extra = "") const {
    return "--seed 3 train --mode bash --data " + (dir / "train.jsonl").string() + " --out " + (dir / out).string() +
           " --warmup-steps 4 --inner-steps 2 --outer-iterations 2 --batch-size 4" + kTiny + " " + extra;
  }

  fs::path dir;
};

}  // namespace

TEST_F(Cli, GenCorpusWritesSplitAndManifest) {
  EXPECT_EQ(bashrac::read_dataset(dir / "train.jsonl").size(), 30u);
  EXPECT_EQ(bashrac::read_dataset(dir / "test.jsonl").size(), 10u);
  const auto m = nlohmann::json::parse(testing_util::slurp(dir / "train.jsonl.manifest.json"));
  EXPECT_EQ(m["command"], "gen-corpus");
  EXPECT_EQ(m["outputs"].size(), 2u);
  EXPECT_EQ(m["outputs"][0]["sha1"].get<std::string>().size(), 40u);
  EXPECT_EQ(m["run_id"].get<std::string>().size(), 12u);
}

TEST_F(Cli, TrainThenEval) {
  const auto r = run(train_args("run"), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.txt", "metrics.csv", "sft_final.ckpt", "bash_final.ckpt", "final.ckpt", "ds_iter1.jsonl",
                        "ds_iter2.jsonl", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  const auto metrics = testing_util::slurp(dir / "run" / "metrics.csv");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 1 + 4 + 4);
  EXPECT_NE(testing_util::slurp(dir / "run" / "config.txt").find("d_model = 16"), std::string::npos);

  const auto e = run("eval --checkpoint " + (dir / "run" / "final.ckpt").string() + " --data " +
                         (dir / "test.jsonl").string() + " --out " + (dir / "eval.jsonl").string() +
                         " --method bash --repeats 2 --temperature 0.7",
                     dir);
  ASSERT_EQ(e.code, 0) << e.err;
  const auto j = nlohmann::json::parse(testing_util::slurp(dir / "eval.jsonl"));
  EXPECT_EQ(j["method"], "bash");
  EXPECT_EQ(j["exact_match_per_repeat"].size(), 2u);
  EXPECT_EQ(j["n_samples"], 20);
  EXPECT_TRUE(fs::exists(dir / "eval.jsonl.manifest.json"));

  const auto em = run("eval --checkpoint " + (dir / "run" / "final.ckpt").string() + " --data " +
                          (dir / "test.jsonl").string() + " --out " + (dir / "em.jsonl").string() + " --metrics em --greedy",
                      dir);
  ASSERT_EQ(em.code, 0) << em.err;
  const auto k = nlohmann::json::parse(testing_util::slurp(dir / "em.jsonl"));
  EXPECT_TRUE(k.contains("exact_match"));
  EXPECT_FALSE(k.contains("rouge1"));
  EXPECT_EQ(k["mode"], "greedy");
}

TEST_F(Cli, TrainingIsReproducible) {
  ASSERT_EQ(run(train_args("a"), dir).code, 0);
  ASSERT_EQ(run(train_args("b"), dir).code, 0);
  for (const char* f : {"final.ckpt", "ds_iter1.jsonl", "ds_iter2.jsonl", "config.txt"})
    EXPECT_EQ(testing_util::slurp(dir / "a" / f), testing_util::slurp(dir / "b" / f)) << f;
  const auto ma = nlohmann::json::parse(testing_util::slurp(dir / "a" / "manifest.json"));
  const auto mb = nlohmann::json::parse(testing_util::slurp(dir / "b" / "manifest.json"));
  EXPECT_EQ(ma["run_id"], mb["run_id"]);
  for (std::size_t i = 0; i < ma["outputs"].size(); ++i) {
    if (ma["outputs"][i].contains("timing")) continue;
    EXPECT_EQ(ma["outputs"][i]["sha1"], mb["outputs"][i]["sha1"]);
  }
}

TEST_F(Cli, BuildDsWithBetaZeroCopiesGroundTruth) {
  ASSERT_EQ(run(train_args("run"), dir).code, 0);
  const auto r = run("build ds --checkpoint " + (dir / "run" / "final.ckpt").string() + " --data " +
                         (dir / "train.jsonl").string() + " --out " + (dir / "ds.jsonl").string() + " --beta 0",
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto items = bashrac::read_mixed(dir / "ds.jsonl");
  ASSERT_EQ(items.size(), 30u);
  for (const auto& m : items) EXPECT_EQ(m.mixed, m.example.continuation);

  const auto d = run("--workers 3 build dr --checkpoint " + (dir / "run" / "final.ckpt").string() + " --data " +
                         (dir / "train.jsonl").string() + " --out " + (dir / "dr3.jsonl").string(),
                     dir);
  ASSERT_EQ(d.code, 0) << d.err;
  ASSERT_EQ(run("build dr --checkpoint " + (dir / "run" / "final.ckpt").string() + " --data " +
                    (dir / "train.jsonl").string() + " --out " + (dir / "dr1.jsonl").string(),
                dir)
                .code,
            0);
  EXPECT_EQ(testing_util::slurp(dir / "dr1.jsonl"), testing_util::slurp(dir / "dr3.jsonl"));
}

TEST_F(Cli, SampleIsSeeded) {
  ASSERT_EQ(run(train_args("run"), dir).code, 0);
  const std::string args = "--seed 11 sample --checkpoint " + (dir / "run" / "final.ckpt").string() + " --prompt 'ab<SEP>'";
  const auto a = run(args, dir), b = run(args, dir);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_FALSE(fs::exists(dir / "sample.json"));
  ASSERT_EQ(run(args + " --manifest " + (dir / "sample.json").string(), dir).code, 0);
  EXPECT_TRUE(fs::exists(dir / "sample.json"));
}

TEST_F(Cli, DistancesAndBench) {
  ASSERT_EQ(run(train_args("run"), dir).code, 0);
  const auto r = run("distances --checkpoint " + (dir / "run" / "final.ckpt").string() + " --prompts " +
                         (dir / "test.jsonl").string() + " --out " + (dir / "dist.jsonl").string() + " --n 8 --method bash",
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto q = testing_util::slurp(dir / "dist.jsonl.quartiles.csv");
  EXPECT_EQ(q.substr(0, q.find('\n')), "method,prompt_id,min,q1,median,q3,max");
  EXPECT_EQ(std::count(q.begin(), q.end(), '\n'), 11);
  const auto b = run("bench --checkpoint " + (dir / "run" / "final.ckpt").string() + " --data " +
                         (dir / "train.jsonl").string() + " --batches 2" + kTiny + " --set batch_size=4",
                     dir);
  ASSERT_EQ(b.code, 0) << b.err;
  const auto j = nlohmann::json::parse(b.out);
  EXPECT_EQ(j["bash_step_ms"].size(), 2u);
  EXPECT_EQ(j["scs_step_ms"].size(), 2u);
}

TEST_F(Cli, ValidationErrorsExitTwo) {
  auto r = run(train_args("run", "--set bogus=1 --set beta=7"), dir);
  EXPECT_EQ(r.code, 2);
  const auto j = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  EXPECT_EQ(j["error"], "validation");
  EXPECT_NE(j["message"].get<std::string>().find("bogus"), std::string::npos);

  EXPECT_EQ(run("eval --checkpoint " + (dir / "none.ckpt").string() + " --data x --out y", dir).code, 2);
  EXPECT_EQ(run("no-such-command", dir).code, 2);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  r = run("sample --checkpoint " + (dir / "junk.ckpt").string() + " --prompt ab", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("\"validation\""), std::string::npos);
  EXPECT_EQ(run("gen-corpus --task sorting --out " + (dir / "s.jsonl").string(), dir).code, 2);
}

TEST_F(Cli, RuntimeFailuresExitThree) {
  ASSERT_EQ(run(train_args("run"), dir).code, 0);
  fs::create_directories(dir / "occupied");
  auto r = run("eval --checkpoint " + (dir / "run" / "final.ckpt").string() + " --data " + (dir / "test.jsonl").string() +
                   " --out " + (dir / "occupied").string(),
               dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("\"runtime\""), std::string::npos);

  r = run(train_args("diverge", "--lr 1e30 --set lr_warmup_frac=0"), dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(fs::exists(dir / "diverge" / "last_good.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "diverge" / "metrics.csv"));
  EXPECT_FALSE(fs::exists(dir / "diverge" / "final.ckpt"));
}
