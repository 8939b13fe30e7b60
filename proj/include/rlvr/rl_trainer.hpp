#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlvr/optimizer.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/sft.hpp"
#include "rlvr/tasks.hpp"
#include "rlvr/verifier.hpp"

namespace rlvr {

struct RlvrConfig {
  std::size_t baseGroupSize = 8;
  std::size_t maxEscalation = 3;
  std::vector<double> escalationThresholds{0.5, 0.25, 0.125};
  double temperatureStart = 0.6;
  double temperatureEnd = 1.0;
  std::size_t totalSteps = 300;
  double learningRate = 1e-6;
  double alphaMin = 0.05;
  double alphaMax = 0.95;
  std::size_t contextLimit = 0;  // 0: the model's context length
  std::size_t batchSize = 16;
  AdamConfig optimizer{};
  std::size_t checkpointEvery = 0;  // 0: no intermediate checkpoints
  std::uint64_t seed = 0;
};

void validate(const RlvrConfig& config);
RlvrConfig rlvrConfigFromJson(const nlohmann::json& j);
nlohmann::ordered_json toJson(const RlvrConfig& config);

// 1 when the extracted answer matches the ground truth, else 0. Never throws.
double computeReward(const CoTSample& sample, const QuestionRecord& question, JudgeClient* judge = nullptr);
double computeReward(std::string_view completionText, const QuestionRecord& question, JudgeClient* judge = nullptr);

struct AdvantageResult {
  std::vector<double> advantages;
  double mean = 0.0;
  double stdev = 0.0;  // population
  bool degenerate = false;
};

// (R_i - mean) / std with population statistics; all zeros when std = 0.
// Throws ContractViolation for fewer than two rewards.
AdvantageResult groupAdvantages(std::span<const double> rewards);

struct Rollout {
  TokenSequence completion;
  double reward = 0.0;
};

// Produces the i-th completion of a group; indices are never reused.
using RolloutSampler = std::function<Rollout(std::size_t index)>;

struct RolloutGroup {
  std::string questionId;
  std::vector<TokenId> prompt;
  std::vector<TokenSequence> completions;
  std::vector<double> rewards;
  double meanReward = 0.0;
  double stdReward = 0.0;
  std::vector<double> advantages;
  std::size_t groupSize = 0;
  std::size_t escalationLevel = 0;
  bool degenerate = false;
  // Group size after each escalation decision, starting with the base size.
  std::vector<std::size_t> sizeHistory;
};

// Samples baseGroupSize completions, then doubles the group (keeping the
// earlier samples) while the mean reward is below the threshold for the
// current level and the level is below maxEscalation.
RolloutGroup adaptiveGroupRollout(const RolloutSampler& sampler, const RlvrConfig& config);

// Sampler drawing from the policy at `temperature`; completion i uses
// deriveSeed(seed, {i}).
RolloutSampler policySampler(const PolicyModel& model, const QuestionRecord& question, double temperature,
                             std::uint64_t seed, JudgeClient* judge = nullptr, std::size_t maxNewTokens = SIZE_MAX);

RolloutGroup adaptiveGroupRollout(const PolicyModel& model, const QuestionRecord& question, const RlvrConfig& config,
                                  double temperature, std::uint64_t seed, JudgeClient* judge = nullptr);

// Linear from temperatureStart (step 0) to temperatureEnd (step totalSteps).
double temperatureAt(std::size_t step, const RlvrConfig& config);

// Keeps records with alphaMin <= successRate <= alphaMax; records without
// stats (or with zero attempts) pass.
std::vector<QuestionRecord> difficultyFilter(const std::vector<QuestionRecord>& records, const RlvrConfig& config);

// Gradient of sum over groups of (1/G) sum_i (A_i / |alpha_i|) log pi(alpha_i).
Checkpoint rlvrGradient(const PolicyModel& model, std::span<const RolloutGroup> groups);

struct RlvrStepMetrics {
  std::size_t step = 0;
  double temperature = 0.0;
  double meanReward = 0.0;
  std::map<std::size_t, std::size_t> groupSizeHistogram;
  double degenerateFraction = 0.0;
  double gradNorm = 0.0;
  std::size_t questions = 0;
  bool updated = false;
};

nlohmann::ordered_json toJson(const RlvrStepMetrics& m);

// Ascends the estimator with one optimizer step. An all-zero gradient (for
// example, only degenerate groups) skips the optimizer, so no parameter
// changes. Throws NonFiniteError naming the step and the question ids.
RlvrStepMetrics applyGroups(PolicyModel& model, Adam& optimizer, std::span<const RolloutGroup> groups, double lr,
                            std::size_t step);

using SamplerFactory = std::function<RolloutSampler(const QuestionRecord& question, std::size_t position)>;

// Rolls out every question of the batch with `factory`, then applyGroups.
RlvrStepMetrics rlvrStep(PolicyModel& model, Adam& optimizer, std::span<const QuestionRecord> batch,
                         const RlvrConfig& config, std::size_t step, const SamplerFactory& factory,
                         std::vector<RolloutGroup>* groupsOut = nullptr);

// Policy rollouts at temperatureAt(step); question j of the batch uses
// deriveSeed(seed, {step, j}).
RlvrStepMetrics rlvrStep(PolicyModel& model, Adam& optimizer, std::span<const QuestionRecord> batch,
                         const RlvrConfig& config, std::size_t step, std::uint64_t seed,
                         JudgeClient* judge = nullptr, std::vector<RolloutGroup>* groupsOut = nullptr);

struct RlvrOutputs {
  std::filesystem::path metricsJsonl;  // empty: not written
  std::filesystem::path metricsCsv;
  std::filesystem::path checkpointDir;  // used when checkpointEvery > 0
};

struct RlvrResult {
  std::vector<RlvrStepMetrics> steps;
  std::vector<QuestionRecord> pool;  // final difficulty statistics
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> written;  // every file written
};

// Runs totalSteps steps. Batches are taken in order from a seeded shuffle
// of difficultyFilter(pool); when the epoch runs out a new one starts.
// Each rollout replaces the question's stats with (G, successes); records
// the filter dropped lose their stats and are probed again next epoch.
RlvrResult trainRlvr(PolicyModel& model, std::vector<QuestionRecord> pool, const RlvrConfig& config,
                     JudgeClient* judge = nullptr, const RlvrOutputs& outputs = {});

// Final CSV: step,temperature,mean_reward,degenerate_fraction,grad_norm,g8,g16,g32,g64
std::string renderMetricsCsv(const std::vector<RlvrStepMetrics>& steps, const RlvrConfig& config);

}  // namespace rlvr
