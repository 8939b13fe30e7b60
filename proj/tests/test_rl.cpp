#include <cmath>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "rlvr/alphabet.hpp"
#include "rlvr/error.hpp"
#include "rlvr/rl_trainer.hpp"
#include "test_util.hpp"

namespace rlvr {
namespace {

std::vector<double> advantagesOf(std::vector<double> r) { return groupAdvantages(r).advantages; }

double populationStd(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

TEST(Advantages, Examples) {
  const auto a = groupAdvantages(std::vector<double>{1, 0, 0, 1});
  EXPECT_EQ(a.mean, 0.5);
  EXPECT_EQ(a.stdev, 0.5);
  EXPECT_EQ(a.advantages, (std::vector<double>{1, -1, -1, 1}));
  EXPECT_EQ(advantagesOf({1, 0}), (std::vector<double>{1, -1}));
  const auto d = groupAdvantages(std::vector<double>{1, 1, 1, 1});
  EXPECT_TRUE(d.degenerate);
  EXPECT_EQ(d.advantages, (std::vector<double>(4, 0.0)));
}

TEST(Advantages, SingletonRejected) {
  EXPECT_THROW(groupAdvantages(std::vector<double>{1}), ContractViolation);
  EXPECT_THROW(groupAdvantages(std::vector<double>{}), ContractViolation);
}

TEST(Advantages, NormalizationLaw) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 8 + rng.below(57);
    std::vector<double> r(n);
    for (double& x : r) x = trial % 2 ? static_cast<double>(rng.below(2)) : rng.uniform(-5, 5);
    const auto a = groupAdvantages(r);
    if (a.degenerate) {
      for (double x : a.advantages) EXPECT_EQ(x, 0.0);
      continue;
    }
    const double mean = std::accumulate(a.advantages.begin(), a.advantages.end(), 0.0) / static_cast<double>(n);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(populationStd(a.advantages), 1.0, 1e-6);
  }
}

// Sampler replaying a fixed reward script; completions are one token long.
RolloutSampler scripted(std::function<double(std::size_t)> reward, std::size_t* calls = nullptr) {
  return [reward, calls](std::size_t i) {
    if (calls) ++*calls;
    return Rollout{TokenSequence{{static_cast<TokenId>(i % 10), alphabet::kEnd}, {}}, reward(i)};
  };
}

TEST(Ladder, ScriptedStubsHitEverySize) {
  const RlvrConfig cfg;
  std::size_t calls = 0;
  auto g = adaptiveGroupRollout(scripted([](std::size_t) { return 1.0; }, &calls), cfg);
  EXPECT_EQ(g.groupSize, 8u);
  EXPECT_EQ(g.escalationLevel, 0u);
  EXPECT_EQ(calls, 8u);
  EXPECT_TRUE(g.degenerate);

  calls = 0;
  g = adaptiveGroupRollout(scripted([](std::size_t i) { return i < 8 ? (i < 3 ? 1.0 : 0.0) : 1.0; }, &calls), cfg);
  EXPECT_EQ(g.groupSize, 16u);
  EXPECT_EQ(g.escalationLevel, 1u);
  EXPECT_EQ(calls, 16u);
  EXPECT_DOUBLE_EQ(g.meanReward, 11.0 / 16.0);

  g = adaptiveGroupRollout(scripted([](std::size_t i) { return i < 16 ? 0.0 : 1.0; }), cfg);
  EXPECT_EQ(g.groupSize, 32u);
  EXPECT_EQ(g.escalationLevel, 2u);

  calls = 0;
  g = adaptiveGroupRollout(scripted([](std::size_t) { return 0.0; }, &calls), cfg);
  EXPECT_EQ(g.groupSize, 64u);
  EXPECT_EQ(g.escalationLevel, 3u);
  EXPECT_EQ(calls, 64u);
  EXPECT_TRUE(g.degenerate);
  EXPECT_EQ(g.sizeHistory, (std::vector<std::size_t>{8, 16, 32, 64}));
}

TEST(Ladder, GroupSizeLawOnRandomStubs) {
  const RlvrConfig cfg;
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const double p = rng.uniform();
    auto local = std::make_shared<Rng>(rng.next());
    const auto g = adaptiveGroupRollout(scripted([p, local](std::size_t) { return local->uniform() < p ? 1.0 : 0.0; }), cfg);
    EXPECT_EQ(g.groupSize, 8u << g.escalationLevel);
    EXPECT_LE(g.escalationLevel, 3u);
    EXPECT_EQ(g.completions.size(), g.groupSize);
    EXPECT_EQ(g.rewards.size(), g.groupSize);
    EXPECT_EQ(g.advantages.size(), g.groupSize);
    for (std::size_t i = 1; i < g.sizeHistory.size(); ++i) EXPECT_EQ(g.sizeHistory[i], 2 * g.sizeHistory[i - 1]);
    if (!g.degenerate) {
      EXPECT_NEAR(std::accumulate(g.advantages.begin(), g.advantages.end(), 0.0) / g.groupSize, 0.0, 1e-9);
      EXPECT_NEAR(populationStd(g.advantages), 1.0, 1e-6);
    }
  }
}

RolloutGroup groupOf(const std::vector<TokenId>& prompt, std::vector<std::vector<TokenId>> completions,
                     std::vector<double> rewards) {
  RolloutGroup g;
  g.questionId = "q";
  g.prompt = prompt;
  for (auto& c : completions) g.completions.push_back(TokenSequence{std::move(c), {}});
  g.rewards = rewards;
  const auto a = groupAdvantages(rewards);
  g.advantages = a.advantages;
  g.meanReward = a.mean;
  g.stdReward = a.stdev;
  g.degenerate = a.degenerate;
  g.groupSize = rewards.size();
  return g;
}

TEST(Estimator, TwoSampleGroupMatchesClosedFormAndFiniteDifferences) {
  const std::vector<TokenId> prompt{3, 10, 4, 13}, win{7, 15}, lose{1, 2, 15};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PolicyModel m = PolicyModel::random(testing::tinyArch(), seed, 1.5);
    const std::vector<RolloutGroup> groups{groupOf(prompt, {win, lose}, {1, 0})};
    const Checkpoint g = rlvrGradient(m, groups);

    // (1/2) (grad log pi(win) / |win| - grad log pi(lose) / |lose|)
    auto objective = [&](const PolicyModel& p) {
      return 0.5 * (logProbOfSequence(p, prompt, win).total / 2.0 - logProbOfSequence(p, prompt, lose).total / 3.0);
    };
    const auto fd = testing::finiteDifferenceCheck(m, g, objective);
    EXPECT_EQ(fd.checked, 160u);
    EXPECT_LT(fd.maxRelError, 1e-4) << "seed " << seed;
  }
}

TEST(Estimator, ArbitraryGroupsMatchFiniteDifferences) {
  Rng rng(12);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PolicyModel m = PolicyModel::random(testing::tinyArch(), seed + 100, 1.5);
    std::vector<RolloutGroup> groups;
    for (int q = 0; q < 2; ++q) {
      const std::vector<TokenId> prompt{static_cast<TokenId>(rng.below(10)), 10, static_cast<TokenId>(rng.below(10)), 13};
      std::vector<std::vector<TokenId>> cs;
      std::vector<double> rs;
      for (int i = 0; i < 8; ++i) {
        std::vector<TokenId> c(1 + rng.below(4));
        for (auto& t : c) t = static_cast<TokenId>(rng.below(16));
        cs.push_back(c);
        rs.push_back(static_cast<double>(i % 3 == 0));
      }
      groups.push_back(groupOf(prompt, cs, rs));
    }
    const Checkpoint g = rlvrGradient(m, groups);
    auto objective = [&](const PolicyModel& p) {
      double j = 0.0;
      for (const auto& grp : groups)
        for (std::size_t i = 0; i < grp.completions.size(); ++i) {
          const auto& c = grp.completions[i].tokens;
          j += grp.advantages[i] / static_cast<double>(c.size()) *
               logProbOfSequence(p, grp.prompt, c).total / static_cast<double>(grp.groupSize);
        }
      return j;
    };
    EXPECT_LT(testing::finiteDifferenceCheck(m, g, objective).maxRelError, 1e-4);
  }
}

TEST(Estimator, StepAscendsTheObjective) {
  PolicyModel m = PolicyModel::random(Architecture{}, 5);
  const std::vector<TokenId> prompt{3, 10, 4, 13}, win{7, 15}, lose{1, 2, 15};
  const std::vector<RolloutGroup> groups{groupOf(prompt, {win, lose}, {1, 0})};
  const double before = logProbOfSequence(m, prompt, win).total;
  Adam adam;
  const auto metrics = applyGroups(m, adam, groups, 1e-3, 0);
  EXPECT_TRUE(metrics.updated);
  EXPECT_GT(metrics.gradNorm, 0.0);
  EXPECT_GT(logProbOfSequence(m, prompt, win).total, before);
}

TEST(Estimator, DegenerateGroupsChangeNoBit) {
  PolicyModel m = PolicyModel::random(Architecture{}, 5);
  const Checkpoint before = m.parameters();
  const std::vector<TokenId> prompt{3, 10, 4, 13};
  std::vector<std::vector<TokenId>> cs(64, std::vector<TokenId>{1, 15});
  const std::vector<RolloutGroup> groups{groupOf(prompt, cs, std::vector<double>(64, 0.0)),
                                         groupOf(prompt, {{2, 15}, {3, 15}}, {1, 1})};
  Adam adam;
  const auto metrics = applyGroups(m, adam, groups, 0.1, 3);
  EXPECT_FALSE(metrics.updated);
  EXPECT_EQ(metrics.gradNorm, 0.0);
  EXPECT_EQ(metrics.degenerateFraction, 1.0);
  EXPECT_EQ(m.parameters(), before);
  EXPECT_EQ(adam.steps(), 0u);
}

TEST(Estimator, AllFailLadderThroughRlvrStepIsANoOp) {
  PolicyModel m = PolicyModel::random(Architecture{}, 8);
  const Checkpoint before = m.parameters();
  SyntheticTaskSpec spec;
  const auto qs = generateTasks(spec, 4);
  RlvrConfig cfg;
  cfg.learningRate = 0.1;
  Adam adam;
  std::vector<RolloutGroup> groups;
  const auto metrics = rlvrStep(m, adam, qs, cfg, 0,
                                [](const QuestionRecord&, std::size_t) { return scripted([](std::size_t) { return 0.0; }); },
                                &groups);
  for (const auto& g : groups) EXPECT_EQ(g.groupSize, 64u);
  EXPECT_EQ(metrics.groupSizeHistogram.at(64), 4u);
  EXPECT_EQ(m.parameters(), before);
}

TEST(Temperature, Endpoints) {
  RlvrConfig cfg;
  cfg.totalSteps = 300;
  EXPECT_EQ(temperatureAt(0, cfg), 0.6);
  EXPECT_EQ(temperatureAt(300, cfg), 1.0);
  EXPECT_NEAR(temperatureAt(150, cfg), 0.8, 1e-15);
  EXPECT_THROW(temperatureAt(301, cfg), ContractViolation);
  for (std::size_t t : {1u, 7u, 13u, 1000u, 1501u}) {
    cfg.totalSteps = t;
    EXPECT_EQ(temperatureAt(0, cfg), 0.6);
    EXPECT_EQ(temperatureAt(t, cfg), 1.0);
  }
}

QuestionRecord withStats(const std::string& id, std::size_t attempts, std::size_t successes) {
  QuestionRecord q;
  q.id = id;
  q.answer = "1";
  q.stats = DifficultyStats{attempts, successes};
  return q;
}

TEST(Filter, Window) {
  const RlvrConfig cfg;
  QuestionRecord fresh;
  fresh.id = "fresh";
  fresh.answer = "1";
  const auto kept = difficultyFilter(
      {withStats("easy", 8, 8), withStats("hard", 8, 0), withStats("mid", 8, 4), withStats("edge", 20, 1), fresh}, cfg);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept[0].id, "mid");
  EXPECT_EQ(kept[1].id, "edge");
  EXPECT_EQ(kept[2].id, "fresh");
}

TEST(Reward, Totality) {
  QuestionRecord q;
  q.id = "h";
  q.answer = "0.5";
  EXPECT_EQ(computeReward("1+1=\\boxed{\\frac{1}{2}}", q), 1.0);
  EXPECT_EQ(computeReward("3=0.5", q), 1.0);
  EXPECT_EQ(computeReward("", q), 0.0);
  EXPECT_EQ(computeReward("=", q), 0.0);
  EXPECT_EQ(computeReward("\\boxed{", q), 0.0);
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    std::string s(rng.below(30), ' ');
    for (char& c : s) c = static_cast<char>(rng.below(256));
    EXPECT_NO_THROW(computeReward(s, q));
  }
  StubTextClient failing;
  EXPECT_EQ(computeReward("1=zero point five", q, &failing), 0.0);
}

TEST(Reward, SampleFormUsesTheVerifier) {
  SyntheticTaskSpec spec;
  const auto q = generateTasks(spec, 1)[0];
  const auto good = makeSample(q, promptFor(q), TokenSequence{alphabet::encode(q.answer), {}});
  EXPECT_EQ(computeReward(good, q), 1.0);
  const auto empty = makeSample(q, promptFor(q), TokenSequence{});
  EXPECT_EQ(computeReward(empty, q), 0.0);
}

TEST(Config, DefaultsAndValidation) {
  const RlvrConfig d;
  EXPECT_EQ(d.baseGroupSize, 8u);
  EXPECT_EQ(d.maxEscalation, 3u);
  EXPECT_EQ(d.escalationThresholds, (std::vector<double>{0.5, 0.25, 0.125}));
  EXPECT_EQ(d.learningRate, 1e-6);
  EXPECT_EQ(d.alphaMin, 0.05);
  EXPECT_EQ(d.alphaMax, 0.95);
  RlvrConfig bad;
  bad.escalationThresholds = {0.5, 0.5, 0.1};
  EXPECT_THROW(validate(bad), InvalidSpec);
  bad = RlvrConfig{};
  bad.temperatureStart = 1.2;
  EXPECT_THROW(validate(bad), InvalidSpec);
  bad = RlvrConfig{};
  bad.alphaMin = 0.9;
  bad.alphaMax = 0.1;
  EXPECT_THROW(validate(bad), InvalidSpec);
  EXPECT_EQ(toJson(rlvrConfigFromJson(toJson(d))), toJson(d));
}

PolicyModel oracleFor(const std::vector<QuestionRecord>& qs) {
  std::vector<std::vector<TokenId>> prompts, answers;
  for (const auto& q : qs) {
    prompts.push_back(promptFor(q));
    answers.push_back(alphabet::encode(q.answer));
  }
  return testing::answerTable(prompts, answers);
}

TEST(Training, WritesMetricsCheckpointsAndStats) {
  SyntheticTaskSpec spec;
  const auto qs = generateTasks(spec, 6);
  PolicyModel m = PolicyModel::random(Architecture{}, 2);
  RlvrConfig cfg;
  cfg.totalSteps = 4;
  cfg.batchSize = 3;
  cfg.checkpointEvery = 2;
  cfg.learningRate = 0.01;
  const auto dir = testing::tempDir("rlvr_train");
  const auto res = trainRlvr(m, qs, cfg, nullptr, {dir / "m.jsonl", dir / "m.csv", dir / "ckpt"});
  ASSERT_EQ(res.steps.size(), 4u);
  EXPECT_EQ(res.checkpoints.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt" / "rlvr-step-000002.ckpt"));
  std::ifstream jl(dir / "m.jsonl");
  std::size_t lines = 0;
  for (std::string l; std::getline(jl, l);) {
    const auto j = nlohmann::json::parse(l);
    EXPECT_EQ(j.at("step").get<std::size_t>(), lines++);
    EXPECT_TRUE(j.contains("group_sizes"));
  }
  EXPECT_EQ(lines, 4u);
  std::ifstream csv(dir / "m.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "step,temperature,mean_reward,degenerate_fraction,grad_norm,g8,g16,g32,g64");
  std::size_t withStats = 0;
  for (const auto& q : res.pool) withStats += q.stats.has_value();
  EXPECT_GT(withStats, 0u);
  EXPECT_EQ(res.steps.front().temperature, 0.6);
}

TEST(Training, DeterministicReplay) {
  SyntheticTaskSpec spec;
  const auto qs = generateTasks(spec, 8);
  RlvrConfig cfg;
  cfg.totalSteps = 5;
  cfg.batchSize = 4;
  cfg.learningRate = 0.01;
  cfg.seed = 3;
  PolicyModel a = PolicyModel::random(Architecture{}, 2), b = a;
  const auto ra = trainRlvr(a, qs, cfg), rb = trainRlvr(b, qs, cfg);
  EXPECT_EQ(renderMetricsCsv(ra.steps, cfg), renderMetricsCsv(rb.steps, cfg));
  EXPECT_EQ(a.parameters(), b.parameters());
}

TEST(Training, PerfectPolicyNeverUpdates) {
  SyntheticTaskSpec spec;
  const auto qs = generateTasks(spec, 6);
  PolicyModel m = oracleFor(qs);
  const Checkpoint before = m.parameters();
  RlvrConfig cfg;
  cfg.totalSteps = 3;
  cfg.batchSize = 6;
  cfg.learningRate = 0.1;
  const auto res = trainRlvr(m, qs, cfg);
  for (const auto& s : res.steps) {
    EXPECT_EQ(s.meanReward, 1.0);
    EXPECT_FALSE(s.updated);
  }
  EXPECT_EQ(m.parameters(), before);
}

}  // namespace
}  // namespace rlvr
