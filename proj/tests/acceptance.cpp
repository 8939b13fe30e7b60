// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "rlvr/alphabet.hpp"
#include "rlvr/error.hpp"
#include "rlvr/merge.hpp"
#include "rlvr/pipeline.hpp"
#include "rlvr/rl_trainer.hpp"
#include "rlvr/sft.hpp"
#include "test_util.hpp"
#include "verifier_corpus.hpp"

namespace {

using namespace rlvr;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

double seconds(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Five toy policies: four plain, one with a live adapter on a frozen base.
std::vector<PolicyModel> toyPolicies() {
  std::vector<PolicyModel> out;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PolicyModel m = PolicyModel::random(testing::tinyArch(), 1000 + seed, 1.5);
    if (seed == 4) {
      m.attachAdapter({"hidden.0.weight", 2, 2.0, 0.0}, seed);
      auto& b = m.mutableParameters().at("adapter.hidden.0.weight.B");
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.1 * static_cast<double>(i % 5) - 0.2;
    }
    out.push_back(std::move(m));
  }
  return out;
}

Outcome gradientOracle() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng(77);
  for (const auto& m : toyPolicies()) {
    std::size_t params = 0;
    for (const auto& e : m.parameters().entries) params += e.tensor.size();
    o.require(params <= 500, "toy policy exceeds 500 parameters");

    // SFT: mean per-token NLL of two pairs, gradient as the SFT step forms it.
    const std::vector<TokenId> p1{1, 10, 2, 13}, c1{3, 15}, p2{4, 12, 2, 13}, c2{8, 15};
    const double T = static_cast<double>(c1.size() + c2.size());
    const std::vector<WeightedCompletion> items{{p1, c1, -1.0 / T}, {p2, c2, -1.0 / T}};
    const Checkpoint gSft = gradLogProbWeighted(m, items);
    auto nll = [&](const PolicyModel& p) {
      return -(logProbOfSequence(p, p1, c1).total + logProbOfSequence(p, p2, c2).total) / T;
    };
    const auto fdSft = testing::finiteDifferenceCheck(m, gSft, nll);
    o.require(fdSft.maxRelError < 1e-4, fmt::format("sft rel error {:.3g}", fdSft.maxRelError));

    // RLVR: one group of eight random completions with binary rewards.
    RolloutGroup g;
    g.prompt = {static_cast<TokenId>(rng.below(10)), 10, static_cast<TokenId>(rng.below(10)), 13};
    for (int i = 0; i < 8; ++i) {
      std::vector<TokenId> c(1 + rng.below(4));
      for (auto& t : c) t = static_cast<TokenId>(rng.below(16));
      g.completions.push_back(TokenSequence{c, {}});
      g.rewards.push_back(i % 3 == 0 ? 1.0 : 0.0);
    }
    g.advantages = groupAdvantages(g.rewards).advantages;
    g.groupSize = 8;
    const std::vector<RolloutGroup> groups{g};
    const Checkpoint gRl = rlvrGradient(m, groups);
    auto objective = [&](const PolicyModel& p) {
      double j = 0.0;
      for (std::size_t i = 0; i < 8; ++i) {
        const auto& c = g.completions[i].tokens;
        j += g.advantages[i] * logProbOfSequence(p, g.prompt, c).total / static_cast<double>(c.size());
      }
      return j / 8.0;
    };
    const auto fdRl = testing::finiteDifferenceCheck(m, gRl, objective);
    o.require(fdRl.maxRelError < 1e-4, fmt::format("rlvr rel error {:.3g}", fdRl.maxRelError));
  }
  const double secs = seconds(t0);
  o.require(secs < 30.0, fmt::format("took {:.1f}s", secs));
  if (o.pass) o.detail = fmt::format("5 policies, {:.2f}s", secs);
  return o;
}

Outcome advantageLaw() {
  Outcome o;
  Rng rng(2024);
  std::size_t degenerate = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 8 + rng.below(57);
    std::vector<double> r(n);
    const int kind = trial % 4;
    for (double& x : r) {
      if (kind == 0) x = static_cast<double>(rng.below(2));
      if (kind == 1) x = rng.uniform(-10, 10);
      if (kind == 2) x = 0.5;
      if (kind == 3) x = rng.uniform() < 0.05 ? 1.0 : 0.0;
    }
    const auto a = groupAdvantages(r);
    double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(n), var = 0.0;
    for (double x : r) var += (x - mean) * (x - mean);
    if (var == 0.0) {
      ++degenerate;
      for (double x : a.advantages) o.require(x == 0.0, "equal rewards gave a non-zero advantage");
      continue;
    }
    const double am = std::accumulate(a.advantages.begin(), a.advantages.end(), 0.0) / static_cast<double>(n);
    double av = 0.0;
    for (double x : a.advantages) av += (x - am) * (x - am);
    o.require(std::fabs(am) <= 1e-9, fmt::format("trial {} mean {:.3g}", trial, am));
    o.require(std::fabs(std::sqrt(av / static_cast<double>(n)) - 1.0) <= 1e-6, fmt::format("trial {} std", trial));
  }
  if (o.pass) o.detail = fmt::format("1000 vectors, {} degenerate", degenerate);
  return o;
}

RolloutSampler scripted(std::function<double(std::size_t)> reward) {
  return [reward](std::size_t i) {
    return Rollout{TokenSequence{{static_cast<TokenId>(i % 10), alphabet::kEnd}, {}}, reward(i)};
  };
}

Outcome groupLadder() {
  Outcome o;
  const RlvrConfig cfg;
  const std::vector<std::pair<std::size_t, std::function<double(std::size_t)>>> scripts{
      {8, [](std::size_t i) { return i % 2 ? 1.0 : 0.0; }},
      {16, [](std::size_t i) { return i < 8 ? (i < 3 ? 1.0 : 0.0) : 1.0; }},
      {32, [](std::size_t i) { return i < 16 ? 0.0 : 1.0; }},
      {64, [](std::size_t) { return 0.0; }},
  };
  std::string sizes;
  for (const auto& [want, script] : scripts) {
    const auto g = adaptiveGroupRollout(scripted(script), cfg);
    sizes += (sizes.empty() ? "" : " -> ") + std::to_string(g.groupSize);
    o.require(g.groupSize == want, fmt::format("expected group size {}, got {}", want, g.groupSize));
  }

  PolicyModel m = PolicyModel::random(Architecture{}, 3);
  const Checkpoint before = m.parameters();
  Adam adam;
  std::vector<RolloutGroup> groups;
  SyntheticTaskSpec spec;
  const auto batch = generateTasks(spec, 4);
  RlvrConfig big = cfg;
  big.learningRate = 0.1;
  rlvrStep(m, adam, batch, big, 0, [](const QuestionRecord&, std::size_t) { return scripted([](std::size_t) { return 0.0; }); },
           &groups);
  for (const auto& g : groups) o.require(g.groupSize == 64 && g.degenerate, "all-fail group did not reach 64");
  o.require(m.parameters() == before, "all-fail groups changed the parameters");
  if (o.pass) o.detail = sizes + ", all-fail delta 0";
  return o;
}

Outcome temperatureEndpoints() {
  Outcome o;
  for (std::size_t total : {1u, 2u, 7u, 300u, 1500u}) {
    RlvrConfig cfg;
    cfg.totalSteps = total;
    o.require(temperatureAt(0, cfg) == 0.6, "start is not 0.6");
    o.require(temperatureAt(total, cfg) == 1.0, "end is not 1.0");
    if (total % 2 == 0) o.require(std::fabs(temperatureAt(total / 2, cfg) - 0.8) <= 1e-15, "midpoint is not 0.8");
  }
  if (o.pass) o.detail = "0.6 / 0.8 / 1.0";
  return o;
}

Outcome bucketTableReplay() {
  Outcome o;
  const std::map<std::size_t, std::size_t> counts{{0, 31470}, {1, 9647}, {2, 9066}, {3, 12643}, {4, 67247}};
  const std::vector<std::size_t> totals{0, 9647, 18132, 37929, 268988};
  const auto rows = bucketTable(counts, 4, 0.10);
  o.require(rows.size() == 5, "wrong number of rows");
  for (std::size_t k = 0; k < rows.size() && k < 5; ++k)
    o.require(rows[k].totalCoTs == totals[k], fmt::format("k={} total {}", k, rows[k].totalCoTs));

  // Sample-level: every question gets n samples with exactly k correct.
  std::vector<std::pair<std::string, std::vector<CoTSample>>> outcomes;
  for (const auto& [k, n] : counts)
    for (std::size_t q = 0; q < n; ++q) {
      const std::string id = fmt::format("k{}-{}", k, q);
      std::vector<CoTSample> samples(4);
      for (std::size_t j = 0; j < 4; ++j) {
        samples[j].questionId = id;
        samples[j].completion.tokens = {alphabet::kEnd};
        samples[j].correct = j < k;
      }
      outcomes.emplace_back(id, std::move(samples));
    }
  RejectionResult result;
  result.n = 4;
  result.buckets = bucketize(4, outcomes);
  for (std::size_t k = 0; k < 5; ++k)
    o.require(result.buckets[k].retainedSamples.size() == totals[k], fmt::format("bucket {} retained", k));
  // Annotated the way rejection sampling annotates: stats = {n, correct}.
  for (const auto& [id, samples] : outcomes) {
    QuestionRecord r;
    r.id = id;
    std::size_t correct = 0;
    for (const auto& s : samples) correct += s.correct ? 1 : 0;
    r.stats = DifficultyStats{4, correct};
    result.annotated.push_back(r);
  }
  const auto exported = rlvrExport(result);
  std::vector<std::string> exportedIds;
  for (const auto& r : exported) exportedIds.push_back(r.id);
  o.require(exportedIds == result.buckets[0].questionIds, "rlvr export differs from bucket 0");
  o.require(exported.size() == 31470, fmt::format("rlvr export has {} records", exported.size()));
  if (o.pass) o.detail = "totals {0, 9647, 18132, 37929, 268988}, bucket 0 -> rlvr";
  return o;
}

Outcome mergeExactness() {
  Outcome o;
  const Checkpoint a = PolicyModel::random(Architecture{}, 11).toCheckpoint();
  const Checkpoint b = PolicyModel::random(Architecture{}, 12).toCheckpoint();
  const Checkpoint c = PolicyModel::random(Architecture{}, 13).toCheckpoint();
  const std::vector<Checkpoint> abc{a, b, c};
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> w(3, 0.0);
    w[i] = 1.0;
    const Checkpoint m = mergeLinear(abc, w);
    o.require(m.entries.size() == abc[i].entries.size(), "entry count changed");
    for (std::size_t e = 0; e < m.entries.size(); ++e)
      o.require(std::memcmp(m.entries[e].tensor.data().data(), abc[i].entries[e].tensor.data().data(),
                            m.entries[e].tensor.size() * sizeof(double)) == 0,
                "identity merge is not bit-equal");
  }

  Checkpoint x, y;
  x.add("w", Tensor({2}, {1.0, 2.0}));
  y.add("w", Tensor({2}, {3.0, 4.0}));
  const std::vector<Checkpoint> xy{x, y};
  const Checkpoint m = mergeLinear(xy, std::vector<double>{0.25, 0.75});
  o.require(m.at("w")[0] == 2.5 && m.at("w")[1] == 3.5, "[1,2]/[3,4] at (0.25, 0.75) is not [2.5, 3.5]");

  for (const auto& bad : std::vector<std::vector<double>>{{0.5, 0.6}, {0.5, 0.4}, {1.0}, {1.5, -0.5}}) {
    bool rejected = false;
    try {
      mergeLinear(std::span(xy).first(std::min(bad.size(), xy.size())), bad);
    } catch (const InvalidSpec&) {
      rejected = true;
    }
    o.require(rejected, "invalid weights accepted");
  }
  if (o.pass) o.detail = "identity bit-equal, [2.5, 3.5], bad sums rejected";
  return o;
}

Outcome verifierCorpus() {
  Outcome o;
  const auto corpus = testing::loadVerifierCorpus(std::string(RLVR_TEST_DATA) + "/verifier_corpus.jsonl");
  o.require(corpus.size() >= 100, "corpus has fewer than 100 cases");
  std::map<MatchStage, std::size_t> perStage;
  std::size_t agree = 0;
  for (const auto& c : corpus) {
    const auto out = testing::runCase(c);
    const bool same = out.verdict.matched == c.matched && out.verdict.stage == c.stage;
    agree += same;
    o.require(same, fmt::format("disagreement on '{}' vs '{}'", c.predicted, c.truth));
    ++perStage[c.stage];
    // Instrumented stage order: earlier stages never reach the judge.
    if (c.judgeReply && c.stage != MatchStage::Judge && c.stage != MatchStage::Exhausted)
      o.require(out.judgeCalls == 0, fmt::format("judge called for '{}'", c.predicted));
  }
  for (auto s : {MatchStage::Exact, MatchStage::Symbolic, MatchStage::Option, MatchStage::Judge})
    o.require(perStage[s] > 0, fmt::format("no {} cases", toString(s)));

  // The two named symbolic pairs, with a judge that must stay silent.
  StubTextClient stub;
  stub.setFallback("\\boxed{NO}");
  for (auto [p, t] : {std::pair{"\\frac{1}{2}", "0.5"}, std::pair{"(x+1)^2", "x^2+2x+1"}}) {
    const auto v = matchAnswers(p, t, {}, &stub);
    o.require(v.matched && v.stage == MatchStage::Symbolic, fmt::format("{} vs {}", p, t));
  }
  o.require(stub.calls() == 0, "judge called after a symbolic match");
  if (o.pass) o.detail = fmt::format("{}/{} agree", agree, corpus.size());
  return o;
}

PipelineConfig demoConfig(std::uint64_t seed, const std::filesystem::path& workDir) {
  std::ifstream in(RLVR_DEMO_CONFIG);
  auto j = nlohmann::json::parse(in);
  j["seed"] = seed;
  PipelineConfig c = pipelineConfigFromJson(j, std::filesystem::path(RLVR_DEMO_CONFIG).parent_path());
  c.workDir = workDir;
  c.logLevel = "warn";
  return c;
}

Outcome learningSmoke() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto root = testing::tempDir("acceptance_smoke");
  std::string gains;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = runPipeline(demoConfig(seed, root / fmt::format("seed{}", seed)), allStages());
    const double gain = r.passAt1.at("rlvr") - r.passAt1.at("sft");
    gains += fmt::format("{}seed {}: sft {:.2f} -> rlvr {:.2f}", gains.empty() ? "" : ", ", seed, r.passAt1.at("sft"),
                         r.passAt1.at("rlvr"));
    o.require(gain >= 0.30, fmt::format("seed {} gained only {:.2f}", seed, gain));
  }
  const double secs = seconds(t0);
  o.require(secs < 300.0, fmt::format("took {:.1f}s", secs));
  if (o.pass) o.detail = fmt::format("{} ({:.1f}s)", gains, secs);
  return o;
}

Outcome determinism() {
  Outcome o;
  const auto root = testing::tempDir("acceptance_replay");
  std::ifstream in(RLVR_DEMO_CONFIG);
  const std::uint64_t seed = nlohmann::json::parse(in).value("seed", 0);
  runPipeline(demoConfig(seed, root / "a"), allStages());
  runPipeline(demoConfig(seed, root / "b"), allStages());
  std::size_t compared = 0;
  std::vector<std::string> files{"manifest.json", "eval/summary.json"};
  for (const char* name : {"merged", "sft", "rlvr"})
    for (const char* ext : {".json", ".csv"}) files.push_back(std::string("eval/") + name + ext);
  for (const auto& f : files) {
    const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    o.require(!a.empty(), f + " is missing");
    o.require(a == b, f + " differs between runs");
    ++compared;
  }
  if (o.pass) o.detail = fmt::format("{} files byte-identical", compared);
  return o;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradientOracle},        {"advantage law", advantageLaw},
      {"group-size ladder", groupLadder},         {"temperature endpoints", temperatureEndpoints},
      {"bucket table replay", bucketTableReplay},      {"merge exactness", mergeExactness},
      {"verifier corpus", verifierCorpus},        {"end-to-end learning", learningSmoke},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
