#include <algorithm>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "rlvr/alphabet.hpp"
#include "rlvr/error.hpp"
#include "rlvr/eval.hpp"
#include "rlvr/merge.hpp"
#include "test_util.hpp"

namespace rlvr {
namespace {

std::vector<QuestionRecord> additionTasks(std::size_t n, std::uint64_t seed = 13) {
  SyntheticTaskSpec s;
  s.seed = seed;
  return generateTasks(s, n);
}

PolicyModel tableFor(const std::vector<QuestionRecord>& qs, const std::vector<std::string>& replies) {
  std::vector<std::vector<TokenId>> prompts, answers;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    prompts.push_back(promptFor(qs[i]));
    answers.push_back(alphabet::encode(replies[i]));
  }
  return testing::answerTable(prompts, answers);
}

PolicyModel oracleFor(const std::vector<QuestionRecord>& qs) {
  std::vector<std::string> replies;
  for (const auto& q : qs) replies.push_back(q.answer);
  return tableFor(qs, replies);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(Evaluate, OraclePolicyScoresOne) {
  const auto qs = additionTasks(20);
  const auto r = evaluate(oracleFor(qs), qs);
  EXPECT_EQ(r.passAt1, 1.0);
  for (const auto& row : r.perQuestion) {
    EXPECT_EQ(row.stage, MatchStage::Exact);
    EXPECT_GE(row.completionTokens, 2u);
  }
}

TEST(Evaluate, EmptyOutputPolicyScoresZero) {
  PolicyModel m = PolicyModel::zeros(Architecture{});
  m.mutableParameters().at("output.bias")[alphabet::kEnd] = 40.0;
  const auto qs = additionTasks(20);
  const auto r = evaluate(m, qs);
  EXPECT_EQ(r.passAt1, 0.0);
  for (const auto& row : r.perQuestion) {
    EXPECT_EQ(row.completionTokens, 1u);
    EXPECT_EQ(row.stage, MatchStage::Exhausted);
  }
  EXPECT_EQ(r.meanTokens, 1.0);
}

TEST(Evaluate, MatchesIndependentRecomputation) {
  const auto qs = additionTasks(40, 2);
  const PolicyModel a = PolicyModel::random(Architecture{}, 1, 2.0), b = PolicyModel::random(Architecture{}, 2, 2.0);
  const std::vector<Checkpoint> parents{a.toCheckpoint(), b.toCheckpoint()};
  const PolicyModel merged = PolicyModel::fromCheckpoint(mergeLinear(parents, std::vector<double>{0.5, 0.5}));
  for (const PolicyModel* m : {&a, &b, &merged}) {
    const auto report = evaluate(*m, qs);
    ASSERT_EQ(report.perQuestion.size(), qs.size());
    std::size_t matched = 0;
    for (std::size_t i = 0; i < qs.size(); ++i) {
      const auto prompt = alphabet::encode(qs[i].questionText + "=");
      const auto out = greedyDecode(*m, prompt);
      std::vector<TokenId> full = prompt;
      full.insert(full.end(), out.tokens.begin(), out.tokens.end());
      const auto answer = extractAnswer(alphabet::decode(full));
      const auto v = answer ? matchAnswers(*answer, qs[i].answer) : MatchVerdict{};
      EXPECT_EQ(report.perQuestion[i].id, qs[i].id);
      EXPECT_EQ(report.perQuestion[i].matched, v.matched);
      EXPECT_EQ(report.perQuestion[i].stage, v.stage);
      EXPECT_EQ(report.perQuestion[i].completionTokens, out.size());
      matched += v.matched;
    }
    EXPECT_DOUBLE_EQ(report.passAt1, static_cast<double>(matched) / qs.size());
  }
}

TEST(Evaluate, ThreadCountDoesNotChangeTheReport) {
  const auto qs = additionTasks(25);
  const PolicyModel m = PolicyModel::random(Architecture{}, 5, 2.0);
  EvalOptions one, four;
  four.threads = 4;
  EXPECT_EQ(renderReport(evaluate(m, qs, one), ReportFormat::Json), renderReport(evaluate(m, qs, four), ReportFormat::Json));
}

TEST(Evaluate, PassAtOneInvariantUnderPermutation) {
  auto qs = additionTasks(30);
  std::vector<std::string> replies;
  for (std::size_t i = 0; i < qs.size(); ++i) replies.push_back(i % 3 ? qs[i].answer : "0");
  const PolicyModel m = tableFor(qs, replies);
  const double base = evaluate(m, qs).passAt1;
  EXPECT_GT(base, 0.0);
  EXPECT_LT(base, 1.0);
  Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    shuffle(qs, rng);
    EXPECT_EQ(evaluate(m, qs).passAt1, base);
  }
}

EvalReport goldenReport() {
  std::vector<QuestionRecord> qs(3);
  const char* text[] = {"4+9", "2+3", "7+7"};
  const char* truth[] = {"13", "5", "14"};
  for (int i = 0; i < 3; ++i) {
    qs[i].id = std::string("g") + std::to_string(i + 1);
    qs[i].questionText = text[i];
    qs[i].answer = truth[i];
  }
  EvalOptions o;
  o.datasetId = "golden";
  o.modelRef = "table.ckpt";
  return evaluate(tableFor(qs, {"13", "5", "15"}), qs, o);
}

TEST(Export, GoldenThreeQuestionFixture) {
  const auto dir = testing::tempDir("eval_golden");
  const EvalReport r = goldenReport();
  exportReport(r, dir / "r.csv", ReportFormat::Csv);
  exportReport(r, dir / "r.json", ReportFormat::Json);
  EXPECT_EQ(slurp(dir / "r.csv"),
            "id,matched,stage,tokens\n"
            "g1,true,exact,3\n"
            "g2,true,exact,2\n"
            "g3,false,exhausted,3\n");
  EXPECT_EQ(slurp(dir / "r.json"), slurp(std::string(RLVR_TEST_DATA) + "/golden_report.json"));
}

TEST(Export, EmptyDatasetGivesHeaderOnlyCsv) {
  const EvalReport r = evaluate(PolicyModel::zeros(Architecture{}), {});
  EXPECT_EQ(r.passAt1, 0.0);
  EXPECT_EQ(renderReport(r, ReportFormat::Csv), "id,matched,stage,tokens\n");
}

TEST(Export, JsonRoundTrip) {
  const auto dir = testing::tempDir("eval_rt");
  const EvalReport r = goldenReport();
  exportReport(r, dir / "r.json", ReportFormat::Json);
  EXPECT_EQ(readReport(dir / "r.json"), r);
}

TEST(Export, CsvQuotesAwkwardIds) {
  EvalReport r;
  r.perQuestion.push_back({"a,\"b\"", true, MatchStage::Symbolic, 4});
  summarize(r);
  EXPECT_EQ(renderReport(r, ReportFormat::Csv), "id,matched,stage,tokens\n\"a,\"\"b\"\"\",true,symbolic,4\n");
}

TEST(Export, DeterministicBytes) {
  const auto qs = additionTasks(15);
  const PolicyModel m = PolicyModel::random(Architecture{}, 9, 2.0);
  EXPECT_EQ(renderReport(evaluate(m, qs), ReportFormat::Json), renderReport(evaluate(m, qs), ReportFormat::Json));
  EXPECT_EQ(renderReport(evaluate(m, qs), ReportFormat::Csv), renderReport(evaluate(m, qs), ReportFormat::Csv));
}

TEST(Export, UnwritablePathNamesThePath) {
  try {
    exportReport(goldenReport(), "/nonexistent/dir/r.json", ReportFormat::Json);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_EQ(e.path(), "/nonexistent/dir/r.json");
  }
}

}  // namespace
}  // namespace rlvr
