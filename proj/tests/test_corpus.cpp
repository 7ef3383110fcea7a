#include <gtest/gtest.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <string>

#include "bashrac/corpus.hpp"
#include "helpers.hpp"

using namespace bashrac;

namespace {

const Vocab kVocab = Vocab::standard();

std::string text(const Tokens& t) { return kVocab.decode(t); }

}  // namespace

TEST(Vocab, LayoutAndSize) {
  EXPECT_EQ(kVocab.size(), 44);
  EXPECT_EQ(kVocab.render(Vocab::kBos), "<BOS>");
  EXPECT_EQ(kVocab.render(Vocab::kEos), "<EOS>");
  EXPECT_EQ(kVocab.render(Vocab::kRefEnd), "<REF_END>");
  EXPECT_EQ(kVocab.id_of('0'), 6);
  EXPECT_EQ(kVocab.id_of('z'), 43);
}

TEST(Vocab, RoundTrips) {
  EXPECT_EQ(kVocab.decode(kVocab.encode("a+b")), "a+b");
  EXPECT_TRUE(kVocab.encode("").empty());
  const Tokens eos{Vocab::kEos};
  EXPECT_EQ(kVocab.decode(eos), "<EOS>");
  const std::string all = "0123456789+=abcdefghijklmnopqrstuvwxyz<SEP><REF_BEGIN>x<REF_END><BOS><EOS><PAD>";
  EXPECT_EQ(kVocab.decode(kVocab.encode(all)), all);
  Tokens ids;
  for (TokenId i = 0; i < kVocab.size(); ++i) ids.push_back(i);
  EXPECT_EQ(kVocab.encode(kVocab.decode(ids)), ids);
}

TEST(Vocab, RejectsUnknownWithPosition) {
  try {
    kVocab.encode("ab#c");
    FAIL();
  } catch (const VocabError& e) {
    EXPECT_EQ(e.position(), 2u);
  }
  try {
    kVocab.encode("a<FOO>");
    FAIL();
  } catch (const VocabError& e) {
    EXPECT_EQ(e.position(), 1u);
  }
  const Tokens bad{6, 7, 44};
  try {
    kVocab.decode(bad);
    FAIL();
  } catch (const VocabError& e) {
    EXPECT_EQ(e.position(), 2u);
  }
}

TEST(Vocab, FileRoundTrip) {
  const auto dir = testing_util::temp_dir("vocab");
  kVocab.write(dir / "vocab.txt");
  const auto lines = testing_util::slurp(dir / "vocab.txt");
  EXPECT_EQ(lines.substr(0, 6), "<BOS>\n");
  const Vocab back = Vocab::read(dir / "vocab.txt");
  EXPECT_EQ(back.size(), kVocab.size());
  EXPECT_EQ(back.symbols(), kVocab.symbols());
}

TEST(Corpus, CopyAndReverse) {
  const auto copy = gen_copy_task(200, 3, 3, false, 5);
  const auto rev = gen_copy_task(200, 3, 3, true, 5);
  for (std::size_t i = 0; i < copy.size(); ++i) {
    const auto& c = copy.examples[i];
    const std::string body = text(c.prompt).substr(0, 3);
    EXPECT_EQ(text(c.prompt), body + "<SEP>");
    EXPECT_EQ(text(c.continuation), body + "<EOS>");
    const auto& v = rev.examples[i];
    const std::string vb = text(v.prompt).substr(0, 3);
    EXPECT_EQ(text(v.continuation), std::string(vb.rbegin(), vb.rend()) + "<EOS>");
  }
  EXPECT_EQ(copy.task_name, "copy");
  EXPECT_EQ(rev.task_name, "reverse");
}

TEST(Corpus, CopyLengthsCoverRange) {
  const auto ds = gen_copy_task(500, 2, 6, false, 1);
  std::size_t lo = 100, hi = 0;
  for (const auto& ex : ds.examples) {
    lo = std::min(lo, ex.prompt.size() - 1);
    hi = std::max(hi, ex.prompt.size() - 1);
    validate_example(ex);
  }
  EXPECT_EQ(lo, 2u);
  EXPECT_EQ(hi, 6u);
}

TEST(Corpus, CopyRejectsBadArguments) {
  EXPECT_THROW(gen_copy_task(0, 1, 3, false, 0), std::invalid_argument);
  EXPECT_THROW(gen_copy_task(1, 4, 3, false, 0), std::invalid_argument);
  EXPECT_THROW(gen_copy_task(1, 0, 3, false, 0), std::invalid_argument);
  EXPECT_THROW(gen_copy_task(1, 1, 80, false, 0), std::invalid_argument);
  EXPECT_NO_THROW(gen_copy_task(1, 1, 78, false, 0));
}

TEST(Corpus, AdditionMatchesIntegerOracle) {
  const auto ds = gen_addition_task(300, 4, 3);
  for (const auto& ex : ds.examples) {
    const std::string p = text(ex.prompt);
    const auto plus = p.find('+');
    ASSERT_NE(plus, std::string::npos);
    ASSERT_EQ(p.back(), '=');
    long a = std::stol(p.substr(0, plus));
    long b = std::stol(p.substr(plus + 1, p.size() - plus - 2));
    EXPECT_LT(a, 10000);
    EXPECT_LT(b, 10000);
    EXPECT_EQ(text(ex.continuation), std::to_string(a + b) + "<EOS>");
  }
}

TEST(Corpus, AdditionOracleCases) {
  const TaskSpec add = TaskSpec::parse("addition");
  EXPECT_EQ(add.answer("0+0="), "0");
  EXPECT_EQ(add.answer("17+25="), "42");
  EXPECT_EQ(add.answer("999+1="), "1000");
  EXPECT_THROW(add.answer("12+3"), std::invalid_argument);
  EXPECT_THROW(gen_addition_task(1, 0, 0), std::invalid_argument);
  EXPECT_THROW(gen_addition_task(1, 7, 0), std::invalid_argument);
}

TEST(Corpus, ExtractOracle) {
  const TaskSpec s2 = TaskSpec::parse("extract-s2");
  EXPECT_EQ(s2.stride, 2);
  EXPECT_EQ(s2.answer("abcdef<SEP>"), "ace");
  const TaskSpec s3 = TaskSpec::parse("extract-s3");
  EXPECT_EQ(s3.answer("ab<SEP>"), "a");
  EXPECT_EQ(s3.answer("abcdefg<SEP>"), "adg");
  EXPECT_THROW(TaskSpec::parse("extract-s1"), std::invalid_argument);
  EXPECT_THROW(TaskSpec::parse("sorting"), std::invalid_argument);
  EXPECT_THROW(gen_extract_task(1, 1, 0), std::invalid_argument);
}

TEST(Corpus, EveryGeneratedExampleSatisfiesItsOracle) {
  for (const auto& ds : {gen_copy_task(100, 1, 10, false, 2), gen_copy_task(100, 1, 10, true, 2),
                         gen_addition_task(100, 5, 2), gen_extract_task(100, 2, 2), gen_extract_task(100, 3, 2)}) {
    const TaskSpec task = TaskSpec::parse(ds.task_name);
    for (const auto& ex : ds.examples) {
      validate_example(ex);
      EXPECT_EQ(text(ex.continuation), task.answer(text(ex.prompt)) + "<EOS>") << ds.task_name << " " << ex.id;
    }
  }
}

TEST(Corpus, GenerationIsDeterministic) {
  const auto dir = testing_util::temp_dir("corpus_det");
  write_dataset(dir / "a.jsonl", gen_extract_task(50, 2, 9));
  write_dataset(dir / "b.jsonl", gen_extract_task(50, 2, 9));
  EXPECT_EQ(testing_util::slurp(dir / "a.jsonl"), testing_util::slurp(dir / "b.jsonl"));
  EXPECT_NE(gen_copy_task(5, 3, 8, false, 1).examples, gen_copy_task(5, 3, 8, false, 2).examples);
}

TEST(Corpus, IdsAreUnique) {
  const auto ds = gen_addition_task(1000, 2, 0);
  std::set<std::string> ids;
  for (const auto& ex : ds.examples) ids.insert(ex.id);
  EXPECT_EQ(ids.size(), ds.size());
  EXPECT_EQ(ds.examples[7].id, "addition-000007");
}

TEST(Corpus, ValidateExampleRejectsBrokenExamples) {
  Example ok{"x", kVocab.encode("ab<SEP>"), kVocab.encode("ab<EOS>")};
  EXPECT_NO_THROW(validate_example(ok));
  auto bad = ok;
  bad.continuation.pop_back();
  EXPECT_THROW(validate_example(bad), std::invalid_argument);
  bad = ok;
  bad.prompt.push_back(Vocab::kPad);
  EXPECT_THROW(validate_example(bad), std::invalid_argument);
  bad = ok;
  bad.continuation.insert(bad.continuation.begin(), Vocab::kEos);
  EXPECT_THROW(validate_example(bad), std::invalid_argument);
  bad = ok;
  bad.prompt.clear();
  EXPECT_THROW(validate_example(bad), std::invalid_argument);
  EXPECT_THROW(validate_example(ok, 6), std::invalid_argument);
  EXPECT_NO_THROW(validate_example(ok, 7));
}

TEST(DatasetIo, WriteReadIdentity) {
  const auto dir = testing_util::temp_dir("io");
  const auto ds = gen_addition_task(40, 3, 4);
  write_dataset(dir / "d.jsonl", ds);
  const auto back = read_dataset(dir / "d.jsonl");
  EXPECT_EQ(back.task_name, "addition");
  EXPECT_EQ(back.examples, ds.examples);
  const auto first = testing_util::slurp(dir / "d.jsonl");
  EXPECT_EQ(first.substr(0, first.find('\n')),
            std::string(R"({"id":"addition-000000","prompt_text":")") + text(ds.examples[0].prompt) +
                R"(","continuation_text":")" + text(ds.examples[0].continuation) + R"(","prompt_ids":)" +
                Json(ds.examples[0].prompt).dump() + R"(,"continuation_ids":)" + Json(ds.examples[0].continuation).dump() +
                "}");
}

TEST(DatasetIo, EmptyDatasetIsEmptyFile) {
  const auto dir = testing_util::temp_dir("io_empty");
  write_dataset(dir / "e.jsonl", Dataset{"copy", 0, {}});
  EXPECT_EQ(std::filesystem::file_size(dir / "e.jsonl"), 0u);
  EXPECT_TRUE(read_dataset(dir / "e.jsonl").empty());
}

TEST(DatasetIo, MalformedLineReportsLineNumber) {
  const auto dir = testing_util::temp_dir("io_bad");
  write_dataset(dir / "t.jsonl", gen_copy_task(3, 2, 4, false, 1));
  auto content = testing_util::slurp(dir / "t.jsonl");
  const auto last = content.rfind('{');
  content = content.substr(0, last + 20) + "\n";  // truncate line 3
  std::ofstream(dir / "t.jsonl", std::ios::binary) << content;
  try {
    read_dataset(dir / "t.jsonl");
    FAIL();
  } catch (const DatasetFormatError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(DatasetIo, RejectsInconsistentRecords) {
  const auto dir = testing_util::temp_dir("io_incons");
  const auto ds = gen_copy_task(2, 2, 4, false, 1);
  auto rec = example_record(ds.examples[0], kVocab);
  rec["prompt_text"] = "zz<SEP>";
  write_records(dir / "a.jsonl", {example_record(ds.examples[1], kVocab), rec});
  try {
    read_dataset(dir / "a.jsonl");
    FAIL();
  } catch (const DatasetFormatError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  write_records(dir / "b.jsonl", {example_record(ds.examples[0], kVocab), example_record(ds.examples[0], kVocab)});
  EXPECT_THROW(read_dataset(dir / "b.jsonl"), DatasetFormatError);
  auto oob = example_record(ds.examples[0], kVocab);
  oob["prompt_ids"][0] = 99;
  write_records(dir / "c.jsonl", {oob});
  EXPECT_THROW(read_dataset(dir / "c.jsonl"), DatasetFormatError);
}

TEST(DatasetIo, SplitTakesTheTail) {
  const auto ds = gen_copy_task(10, 1, 3, false, 0);
  const auto [train, test] = split_dataset(ds, 3);
  EXPECT_EQ(train.size(), 7u);
  EXPECT_EQ(test.size(), 3u);
  EXPECT_EQ(test.examples[0].id, ds.examples[7].id);
  EXPECT_THROW(split_dataset(ds, 11), std::invalid_argument);
}
