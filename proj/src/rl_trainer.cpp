#include "rlvr/rl_trainer.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include <fmt/format.h>

#include "rlvr/alphabet.hpp"
#include "rlvr/error.hpp"
#include "rlvr/random.hpp"
#include "rlvr/tensor.hpp"

namespace rlvr {

void validate(const RlvrConfig& c) {
  if (c.baseGroupSize < 2) throw InvalidSpec("base group size must be at least 2");
  if (c.escalationThresholds.size() < c.maxEscalation)
    throw InvalidSpec("need one escalation threshold per escalation level");
  for (std::size_t i = 0; i < c.escalationThresholds.size(); ++i) {
    const double t = c.escalationThresholds[i];
    if (!(t > 0.0 && t < 1.0)) throw InvalidSpec("escalation thresholds must lie in (0, 1)");
    if (i > 0 && !(t < c.escalationThresholds[i - 1]))
      throw InvalidSpec("escalation thresholds must be strictly decreasing");
  }
  if (!(c.temperatureStart > 0.0) || !(c.temperatureStart <= c.temperatureEnd))
    throw InvalidSpec("temperatures must satisfy 0 < start <= end");
  if (!(c.alphaMin >= 0.0 && c.alphaMin < c.alphaMax && c.alphaMax <= 1.0))
    throw InvalidSpec("difficulty window must satisfy 0 <= alpha_min < alpha_max <= 1");
  if (c.totalSteps == 0) throw InvalidSpec("total steps must be positive");
  if (!(c.learningRate >= 0.0) || !std::isfinite(c.learningRate)) throw InvalidSpec("learning rate must be >= 0");
  if (c.batchSize == 0) throw InvalidSpec("batch size must be positive");
}

RlvrConfig rlvrConfigFromJson(const nlohmann::json& j) {
  RlvrConfig c;
  try {
    c.baseGroupSize = j.value("base_group_size", c.baseGroupSize);
    c.maxEscalation = j.value("max_escalation", c.maxEscalation);
    c.escalationThresholds = j.value("escalation_thresholds", c.escalationThresholds);
    c.temperatureStart = j.value("temperature_start", c.temperatureStart);
    c.temperatureEnd = j.value("temperature_end", c.temperatureEnd);
    c.totalSteps = j.value("total_steps", c.totalSteps);
    c.learningRate = j.value("learning_rate", c.learningRate);
    c.alphaMin = j.value("alpha_min", c.alphaMin);
    c.alphaMax = j.value("alpha_max", c.alphaMax);
    c.contextLimit = j.value("context_limit", c.contextLimit);
    c.batchSize = j.value("batch_size", c.batchSize);
    c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
    c.optimizer.epsilon = j.value("epsilon", c.optimizer.epsilon);
    c.optimizer.weightDecay = j.value("weight_decay", c.optimizer.weightDecay);
    c.checkpointEvery = j.value("checkpoint_every", c.checkpointEvery);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("malformed rlvr config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::ordered_json toJson(const RlvrConfig& c) {
  nlohmann::ordered_json j;
  j["base_group_size"] = c.baseGroupSize;
  j["max_escalation"] = c.maxEscalation;
  j["escalation_thresholds"] = c.escalationThresholds;
  j["temperature_start"] = c.temperatureStart;
  j["temperature_end"] = c.temperatureEnd;
  j["total_steps"] = c.totalSteps;
  j["learning_rate"] = c.learningRate;
  j["alpha_min"] = c.alphaMin;
  j["alpha_max"] = c.alphaMax;
  j["context_limit"] = c.contextLimit;
  j["batch_size"] = c.batchSize;
  j["beta1"] = c.optimizer.beta1;
  j["beta2"] = c.optimizer.beta2;
  j["epsilon"] = c.optimizer.epsilon;
  j["weight_decay"] = c.optimizer.weightDecay;
  j["checkpoint_every"] = c.checkpointEvery;
  j["seed"] = c.seed;
  return j;
}

double computeReward(std::string_view completionText, const QuestionRecord& question, JudgeClient* judge) {
  try {
    const auto answer = extractAnswer(completionText);
    if (!answer) return 0.0;
    return matchAnswers(*answer, question.answer, question.options, judge).matched ? 1.0 : 0.0;
  } catch (...) {
    return 0.0;
  }
}

double computeReward(const CoTSample& sample, const QuestionRecord& question, JudgeClient* judge) {
  if (sample.decodedAnswer.empty()) return 0.0;
  try {
    return matchAnswers(sample.decodedAnswer, question.answer, question.options, judge).matched ? 1.0 : 0.0;
  } catch (...) {
    return 0.0;
  }
}

AdvantageResult groupAdvantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ContractViolation("group advantages need at least two rewards");
  AdvantageResult r;
  const double n = static_cast<double>(rewards.size());
  r.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double x : rewards) var += (x - r.mean) * (x - r.mean);
  r.stdev = std::sqrt(var / n);
  r.advantages.assign(rewards.size(), 0.0);
  if (r.stdev == 0.0) {
    r.degenerate = true;
    return r;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) r.advantages[i] = (rewards[i] - r.mean) / r.stdev;
  return r;
}

RolloutGroup adaptiveGroupRollout(const RolloutSampler& sampler, const RlvrConfig& config) {
  validate(config);
  RolloutGroup g;
  auto draw = [&](std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      Rollout r = sampler(g.completions.size());
      g.completions.push_back(std::move(r.completion));
      g.rewards.push_back(r.reward);
    }
  };
  auto mean = [&] { return std::accumulate(g.rewards.begin(), g.rewards.end(), 0.0) / static_cast<double>(g.rewards.size()); };

  std::size_t size = config.baseGroupSize;
  draw(size);
  g.sizeHistory.push_back(size);
  std::size_t k = 0;
  while (k < config.maxEscalation && mean() < config.escalationThresholds[k]) {
    draw(size);
    size *= 2;
    ++k;
    g.sizeHistory.push_back(size);
  }
  g.groupSize = size;
  g.escalationLevel = k;
  const AdvantageResult a = groupAdvantages(g.rewards);
  g.meanReward = a.mean;
  g.stdReward = a.stdev;
  g.advantages = a.advantages;
  g.degenerate = a.degenerate;
  return g;
}

RolloutSampler policySampler(const PolicyModel& model, const QuestionRecord& question, double temperature,
                             std::uint64_t seed, JudgeClient* judge, std::size_t maxNewTokens) {
  auto prompt = std::make_shared<const std::vector<TokenId>>(promptFor(question));
  return [&model, &question, prompt, temperature, seed, judge, maxNewTokens](std::size_t i) {
    Rollout r;
    r.completion = sample(model, *prompt, temperature, deriveSeed(seed, {i}), maxNewTokens);
    std::vector<TokenId> full = *prompt;
    full.insert(full.end(), r.completion.tokens.begin(), r.completion.tokens.end());
    r.reward = computeReward(alphabet::decode(full), question, judge);
    return r;
  };
}

namespace {

std::size_t maxNewFor(const RlvrConfig& config, std::size_t promptSize) {
  if (config.contextLimit == 0) return SIZE_MAX;
  return config.contextLimit > promptSize ? config.contextLimit - promptSize : 0;
}

}  // namespace

RolloutGroup adaptiveGroupRollout(const PolicyModel& model, const QuestionRecord& question, const RlvrConfig& config,
                                  double temperature, std::uint64_t seed, JudgeClient* judge) {
  auto prompt = promptFor(question);
  RolloutGroup g = adaptiveGroupRollout(
      policySampler(model, question, temperature, seed, judge, maxNewFor(config, prompt.size())), config);
  g.questionId = question.id;
  g.prompt = std::move(prompt);
  return g;
}

double temperatureAt(std::size_t step, const RlvrConfig& config) {
  if (step > config.totalSteps)
    throw ContractViolation("step " + std::to_string(step) + " outside [0, " + std::to_string(config.totalSteps) + "]");
  if (step == config.totalSteps) return config.temperatureEnd;
  return config.temperatureStart + (config.temperatureEnd - config.temperatureStart) * static_cast<double>(step) /
                                       static_cast<double>(config.totalSteps);
}

std::vector<QuestionRecord> difficultyFilter(const std::vector<QuestionRecord>& records, const RlvrConfig& config) {
  std::vector<QuestionRecord> out;
  for (const auto& r : records) {
    const auto rate = r.stats ? r.stats->successRate() : std::nullopt;
    if (!rate || (config.alphaMin <= *rate && *rate <= config.alphaMax)) out.push_back(r);
  }
  return out;
}

Checkpoint rlvrGradient(const PolicyModel& model, std::span<const RolloutGroup> groups) {
  std::vector<WeightedCompletion> items;
  for (const auto& g : groups) {
    if (g.degenerate) continue;
    const double G = static_cast<double>(g.completions.size());
    for (std::size_t i = 0; i < g.completions.size(); ++i) {
      const auto& c = g.completions[i].tokens;
      if (g.advantages[i] == 0.0 || c.empty()) continue;
      items.push_back({g.prompt, c, g.advantages[i] / (G * static_cast<double>(c.size()))});
    }
  }
  if (items.empty()) return model.parameters().zerosLike();
  return gradLogProbWeighted(model, items);
}

nlohmann::ordered_json toJson(const RlvrStepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["temperature"] = m.temperature;
  j["mean_reward"] = m.meanReward;
  nlohmann::ordered_json hist = nlohmann::ordered_json::object();
  for (const auto& [size, count] : m.groupSizeHistogram) hist[std::to_string(size)] = count;
  j["group_sizes"] = std::move(hist);
  j["degenerate_fraction"] = m.degenerateFraction;
  j["grad_norm"] = m.gradNorm;
  j["questions"] = m.questions;
  j["updated"] = m.updated;
  return j;
}

RlvrStepMetrics applyGroups(PolicyModel& model, Adam& optimizer, std::span<const RolloutGroup> groups, double lr,
                            std::size_t step) {
  RlvrStepMetrics m;
  m.step = step;
  m.questions = groups.size();
  double rewardSum = 0.0;
  std::size_t degenerate = 0;
  for (const auto& g : groups) {
    rewardSum += g.meanReward;
    degenerate += g.degenerate ? 1 : 0;
    ++m.groupSizeHistogram[g.groupSize];
  }
  if (!groups.empty()) {
    m.meanReward = rewardSum / static_cast<double>(groups.size());
    m.degenerateFraction = static_cast<double>(degenerate) / static_cast<double>(groups.size());
  }
  Checkpoint grad = rlvrGradient(model, groups);
  if (!allFinite(grad)) {
    std::string ids;
    for (const auto& g : groups) ids += (ids.empty() ? "" : ",") + g.questionId;
    throw NonFiniteError("non-finite rlvr gradient at step " + std::to_string(step) + " (questions " + ids + ")");
  }
  m.gradNorm = globalNorm(grad);
  if (m.gradNorm == 0.0) return m;
  // Adam minimizes; the objective is ascended.
  for (auto& e : grad.entries)
    for (double& v : e.tensor.data()) v = -v;
  optimizer.step(model.mutableParameters(), grad, model.trainableMask(), lr);
  m.updated = lr != 0.0;
  return m;
}

RlvrStepMetrics rlvrStep(PolicyModel& model, Adam& optimizer, std::span<const QuestionRecord> batch,
                         const RlvrConfig& config, std::size_t step, const SamplerFactory& factory,
                         std::vector<RolloutGroup>* groupsOut) {
  validate(config);
  std::vector<RolloutGroup> groups;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    RolloutGroup g = adaptiveGroupRollout(factory(batch[j], j), config);
    g.questionId = batch[j].id;
    g.prompt = promptFor(batch[j]);
    groups.push_back(std::move(g));
  }
  RlvrStepMetrics m = applyGroups(model, optimizer, groups, config.learningRate, step);
  m.temperature = temperatureAt(std::min(step, config.totalSteps), config);
  if (groupsOut) *groupsOut = std::move(groups);
  return m;
}

RlvrStepMetrics rlvrStep(PolicyModel& model, Adam& optimizer, std::span<const QuestionRecord> batch,
                         const RlvrConfig& config, std::size_t step, std::uint64_t seed, JudgeClient* judge,
                         std::vector<RolloutGroup>* groupsOut) {
  const double temperature = temperatureAt(step, config);
  // Rollouts read the pre-update parameters; the factory is consumed before applyGroups.
  const PolicyModel& snapshot = model;
  SamplerFactory factory = [&](const QuestionRecord& q, std::size_t j) {
    return policySampler(snapshot, q, temperature, deriveSeed(seed, {step, j}), judge,
                         maxNewFor(config, promptFor(q).size()));
  };
  return rlvrStep(model, optimizer, batch, config, step, factory, groupsOut);
}

std::string renderMetricsCsv(const std::vector<RlvrStepMetrics>& steps, const RlvrConfig& config) {
  std::vector<std::size_t> sizes;
  for (std::size_t k = 0, g = config.baseGroupSize; k <= config.maxEscalation; ++k, g *= 2) sizes.push_back(g);
  std::string out = "step,temperature,mean_reward,degenerate_fraction,grad_norm";
  for (std::size_t g : sizes) out += fmt::format(",g{}", g);
  out += '\n';
  for (const auto& m : steps) {
    out += fmt::format("{},{},{},{},{}", m.step, m.temperature, m.meanReward, m.degenerateFraction, m.gradNorm);
    for (std::size_t g : sizes) {
      auto it = m.groupSizeHistogram.find(g);
      out += fmt::format(",{}", it == m.groupSizeHistogram.end() ? 0 : it->second);
    }
    out += '\n';
  }
  return out;
}

RlvrResult trainRlvr(PolicyModel& model, std::vector<QuestionRecord> pool, const RlvrConfig& config,
                     JudgeClient* judge, const RlvrOutputs& outputs) {
  validate(config);
  if (pool.empty()) throw ContractViolation("rlvr needs a non-empty question pool");
  RlvrResult result;
  Adam adam(config.optimizer);

  std::ofstream jsonl;
  if (!outputs.metricsJsonl.empty()) {
    jsonl.open(outputs.metricsJsonl, std::ios::binary | std::ios::trunc);
    if (!jsonl) throw IoError(outputs.metricsJsonl.string(), "cannot open metrics file");
    result.written.push_back(outputs.metricsJsonl);
  }
  if (config.checkpointEvery > 0 && !outputs.checkpointDir.empty())
    std::filesystem::create_directories(outputs.checkpointDir);

  std::vector<std::size_t> order;
  std::size_t cursor = 0, epoch = 0;
  auto startEpoch = [&] {
    order.clear();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const auto rate = pool[i].stats ? pool[i].stats->successRate() : std::nullopt;
      if (!rate || (config.alphaMin <= *rate && *rate <= config.alphaMax))
        order.push_back(i);
      else
        pool[i].stats.reset();
    }
    if (order.empty())
      for (std::size_t i = 0; i < pool.size(); ++i) order.push_back(i);
    Rng rng(deriveSeed(config.seed, {0xE90C, epoch++}));
    shuffle(order, rng);
    cursor = 0;
  };

  for (std::size_t step = 0; step < config.totalSteps; ++step) {
    if (cursor >= order.size()) startEpoch();
    const std::size_t end = std::min(order.size(), cursor + config.batchSize);
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    cursor = end;
    std::vector<QuestionRecord> batch;
    for (std::size_t i : idx) batch.push_back(pool[i]);

    std::vector<RolloutGroup> groups;
    RlvrStepMetrics m = rlvrStep(model, adam, batch, config, step, config.seed, judge, &groups);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      std::size_t successes = 0;
      for (double r : groups[j].rewards) successes += r > 0.5 ? 1 : 0;
      pool[idx[j]].stats = DifficultyStats{groups[j].groupSize, successes};
    }
    if (jsonl.is_open()) jsonl << toJson(m).dump() << '\n';
    result.steps.push_back(std::move(m));

    if (config.checkpointEvery > 0 && !outputs.checkpointDir.empty() && (step + 1) % config.checkpointEvery == 0) {
      const auto path = outputs.checkpointDir / fmt::format("rlvr-step-{:06}.ckpt", step + 1);
      writeCheckpoint(model.toCheckpoint(), path);
      result.checkpoints.push_back(path);
      result.written.push_back(path);
    }
  }
  if (jsonl.is_open()) {
    jsonl.close();
    if (!jsonl) throw IoError(outputs.metricsJsonl.string(), "write failed");
  }
  if (!outputs.metricsCsv.empty()) {
    std::ofstream csv(outputs.metricsCsv, std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError(outputs.metricsCsv.string(), "cannot open metrics file");
    csv << renderMetricsCsv(result.steps, config);
    result.written.push_back(outputs.metricsCsv);
  }
  result.pool = std::move(pool);
  return result;
}

}  // namespace rlvr
