#include "rlvr/sft.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rlvr/alphabet.hpp"
#include "rlvr/error.hpp"
#include "rlvr/random.hpp"

namespace rlvr {

CoTSample makeSample(const QuestionRecord& q, std::vector<TokenId> prompt, TokenSequence completion,
                     JudgeClient* judge) {
  CoTSample s;
  s.questionId = q.id;
  std::vector<TokenId> full = prompt;
  full.insert(full.end(), completion.tokens.begin(), completion.tokens.end());
  const auto answer = extractAnswer(alphabet::decode(full));
  s.prompt = std::move(prompt);
  s.completion = std::move(completion);
  if (answer) {
    s.decodedAnswer = *answer;
    s.correct = matchAnswers(*answer, q.answer, q.options, judge).matched;
  }
  return s;
}

std::vector<QuestionBucket> bucketize(std::size_t n,
                                      const std::vector<std::pair<std::string, std::vector<CoTSample>>>& outcomes) {
  if (n == 0) throw ContractViolation("best-of-n needs n >= 1");
  std::vector<QuestionBucket> buckets(n + 1);
  for (std::size_t k = 0; k <= n; ++k) buckets[k].k = k;
  for (const auto& [id, samples] : outcomes) {
    if (samples.size() != n)
      throw ContractViolation("question " + id + " has " + std::to_string(samples.size()) + " samples, expected " +
                              std::to_string(n));
    const auto k = static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(),
                                                          [](const CoTSample& s) { return s.correct; }));
    buckets[k].questionIds.push_back(id);
    for (const auto& s : samples)
      if (s.correct) buckets[k].retainedSamples.push_back(s);
  }
  return buckets;
}

RejectionResult rejectionSample(const PolicyModel& model, const std::vector<QuestionRecord>& questions,
                                const RejectionConfig& config, JudgeClient* judge) {
  if (config.n == 0) throw ContractViolation("best-of-n needs n >= 1");
  if (!(config.temperature > 0.0)) throw ContractViolation("rejection temperature must be positive");
  std::vector<std::pair<std::string, std::vector<CoTSample>>> outcomes;
  RejectionResult result;
  result.n = config.n;
  for (std::size_t qi = 0; qi < questions.size(); ++qi) {
    const auto& q = questions[qi];
    const auto prompt = promptFor(q);
    std::vector<CoTSample> samples;
    std::size_t correct = 0;
    for (std::size_t j = 0; j < config.n; ++j) {
      TokenSequence c = sample(model, prompt, config.temperature, deriveSeed(config.seed, {qi, j}), config.maxNewTokens);
      samples.push_back(makeSample(q, prompt, std::move(c), judge));
      correct += samples.back().correct ? 1 : 0;
    }
    QuestionRecord annotated = q;
    annotated.stats = DifficultyStats{config.n, correct};
    result.annotated.push_back(std::move(annotated));
    outcomes.emplace_back(q.id, std::move(samples));
  }
  result.buckets = bucketize(config.n, outcomes);
  return result;
}

std::vector<QuestionRecord> rlvrExport(const RejectionResult& result) {
  std::vector<QuestionRecord> out;
  for (const auto& r : result.annotated)
    if (r.stats && r.stats->successes == 0) out.push_back(r);
  return out;
}

std::vector<BucketRow> bucketTable(const std::map<std::size_t, std::size_t>& questionsPerK, std::size_t n,
                                   double fractionForFull) {
  if (n == 0) throw ContractViolation("best-of-n needs n >= 1");
  if (!(fractionForFull >= 0.0 && fractionForFull <= 1.0)) throw ContractViolation("fraction must lie in [0, 1]");
  std::vector<BucketRow> rows;
  for (std::size_t k = 0; k <= n; ++k) {
    BucketRow row;
    row.k = k;
    auto it = questionsPerK.find(k);
    row.questions = it == questionsPerK.end() ? 0 : it->second;
    row.totalCoTs = k * row.questions;
    if (k == 0) {
      row.usage = "rlvr";
    } else if (k < n) {
      row.sftCoTs = row.totalCoTs;
      row.usage = "sft";
    } else {
      row.sftCoTs = static_cast<std::size_t>(std::llround(fractionForFull * static_cast<double>(row.totalCoTs)));
      row.usage = "sft-sampled";
    }
    rows.push_back(std::move(row));
  }
  for (const auto& [k, count] : questionsPerK)
    if (k > n) throw ContractViolation("bucket " + std::to_string(k) + " exceeds n");
  return rows;
}

std::vector<QuestionBucket> selectForSft(const std::vector<QuestionBucket>& buckets, double fractionForFull,
                                         std::uint64_t seed) {
  if (!(fractionForFull >= 0.0 && fractionForFull <= 1.0)) throw ContractViolation("fraction must lie in [0, 1]");
  std::vector<QuestionBucket> out = buckets;
  if (out.empty()) return out;
  auto& full = out.back();
  const std::size_t total = full.retainedSamples.size();
  const auto keep = static_cast<std::size_t>(std::llround(fractionForFull * static_cast<double>(total)));
  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `keep` slots are a uniform subset.
  for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.below(total - i)]);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<CoTSample> kept;
  kept.reserve(keep);
  for (std::size_t i : idx) kept.push_back(full.retainedSamples[i]);
  full.retainedSamples = std::move(kept);
  return out;
}

std::vector<CurriculumItem> curriculumOrder(const std::vector<QuestionBucket>& buckets, std::uint64_t seed,
                                            bool interleave) {
  std::vector<const QuestionBucket*> ordered;
  for (const auto& b : buckets)
    if (b.k > 0) ordered.push_back(&b);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const QuestionBucket* a, const QuestionBucket* b) { return a->k > b->k; });
  std::vector<CurriculumItem> stream;
  for (const auto* b : ordered) {
    std::vector<CurriculumItem> stage;
    for (const auto& s : b->retainedSamples) stage.push_back({b->k, &s});
    if (!interleave) {
      Rng rng(deriveSeed(seed, {b->k}));
      shuffle(stage, rng);
    }
    stream.insert(stream.end(), stage.begin(), stage.end());
  }
  if (interleave) {
    Rng rng(seed);
    shuffle(stream, rng);
  }
  return stream;
}

void writeBuckets(const std::filesystem::path& path, const std::vector<QuestionBucket>& buckets) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  for (const auto& b : buckets) {
    std::map<std::string, std::vector<const CoTSample*>> byQuestion;
    for (const auto& s : b.retainedSamples) byQuestion[s.questionId].push_back(&s);
    for (const auto& id : b.questionIds) {
      nlohmann::ordered_json j;
      j["question_id"] = id;
      j["k"] = b.k;
      const auto& samples = byQuestion[id];
      j["prompt"] = samples.empty() ? std::vector<TokenId>{} : samples.front()->prompt;
      auto comps = nlohmann::ordered_json::array();
      for (const auto* s : samples) comps.push_back({{"tokens", s->completion.tokens}, {"answer", s->decodedAnswer}});
      j["completions"] = std::move(comps);
      out << j.dump() << '\n';
    }
  }
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<QuestionBucket> readBuckets(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open bucket file");
  std::vector<QuestionBucket> buckets;
  std::string line;
  std::size_t lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto k = j.at("k").get<std::size_t>();
      if (buckets.size() <= k) {
        const std::size_t old = buckets.size();
        buckets.resize(k + 1);
        for (std::size_t i = old; i <= k; ++i) buckets[i].k = i;
      }
      auto& b = buckets[k];
      const auto id = j.at("question_id").get<std::string>();
      b.questionIds.push_back(id);
      const auto prompt = j.at("prompt").get<std::vector<TokenId>>();
      for (const auto& c : j.at("completions")) {
        CoTSample s;
        s.questionId = id;
        s.prompt = prompt;
        s.completion.tokens = c.at("tokens").get<std::vector<TokenId>>();
        s.decodedAnswer = c.at("answer").get<std::string>();
        s.correct = true;
        b.retainedSamples.push_back(std::move(s));
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string(), "line " + std::to_string(lineNo) + ": " + e.what());
    }
  }
  return buckets;
}

void validate(const SftConfig& c) {
  if (c.epochs == 0 || c.batchSize == 0 || c.gradAccumulation == 0)
    throw InvalidSpec("sft epochs, batch size and accumulation must be positive");
  if (!(c.lrInitial > 0.0) || !(c.lrFinal > 0.0) || c.lrFinal > c.lrInitial)
    throw InvalidSpec("sft learning rates must be positive with final <= initial");
  if (c.useAdapters && c.adapterRank == 0) throw InvalidSpec("adapter rank must be positive");
  if (!(c.adapterDropout >= 0.0 && c.adapterDropout < 1.0)) throw InvalidSpec("adapter dropout must lie in [0, 1)");
  if (!(c.sampleFractionForFull >= 0.0 && c.sampleFractionForFull <= 1.0))
    throw InvalidSpec("sample fraction must lie in [0, 1]");
  if (!(c.rejectionTemperature > 0.0)) throw InvalidSpec("rejection temperature must be positive");
  if (c.rejectionN == 0) throw InvalidSpec("rejection n must be positive");
}

SftConfig sftConfigFromJson(const nlohmann::json& j) {
  SftConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batchSize = j.value("batch_size", c.batchSize);
    c.gradAccumulation = j.value("grad_accumulation", c.gradAccumulation);
    c.lrInitial = j.value("lr_initial", c.lrInitial);
    c.lrFinal = j.value("lr_final", c.lrFinal);
    c.warmupSteps = j.value("warmup_steps", c.warmupSteps);
    c.maxSeqLen = j.value("max_seq_len", c.maxSeqLen);
    c.useAdapters = j.value("use_adapters", c.useAdapters);
    c.adapterRank = j.value("adapter_rank", c.adapterRank);
    c.adapterAlpha = j.value("adapter_alpha", c.adapterAlpha);
    c.adapterDropout = j.value("adapter_dropout", c.adapterDropout);
    c.adapterTargets = j.value("adapter_targets", c.adapterTargets);
    c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
    c.optimizer.epsilon = j.value("epsilon", c.optimizer.epsilon);
    c.optimizer.weightDecay = j.value("weight_decay", c.optimizer.weightDecay);
    c.sampleFractionForFull = j.value("sample_fraction_full", c.sampleFractionForFull);
    c.rejectionTemperature = j.value("rejection_temperature", c.rejectionTemperature);
    c.rejectionN = j.value("rejection_n", c.rejectionN);
    c.interleave = j.value("interleave", c.interleave);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("malformed sft config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::ordered_json toJson(const SftConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batchSize;
  j["grad_accumulation"] = c.gradAccumulation;
  j["lr_initial"] = c.lrInitial;
  j["lr_final"] = c.lrFinal;
  j["warmup_steps"] = c.warmupSteps;
  j["max_seq_len"] = c.maxSeqLen;
  j["use_adapters"] = c.useAdapters;
  j["adapter_rank"] = c.adapterRank;
  j["adapter_alpha"] = c.adapterAlpha;
  j["adapter_dropout"] = c.adapterDropout;
  j["adapter_targets"] = c.adapterTargets;
  j["beta1"] = c.optimizer.beta1;
  j["beta2"] = c.optimizer.beta2;
  j["epsilon"] = c.optimizer.epsilon;
  j["weight_decay"] = c.optimizer.weightDecay;
  j["sample_fraction_full"] = c.sampleFractionForFull;
  j["rejection_temperature"] = c.rejectionTemperature;
  j["rejection_n"] = c.rejectionN;
  j["interleave"] = c.interleave;
  j["seed"] = c.seed;
  return j;
}

double sftLearningRate(const SftConfig& c, std::size_t step, std::size_t totalSteps) {
  if (step < c.warmupSteps)
    return c.lrInitial * static_cast<double>(step + 1) / static_cast<double>(c.warmupSteps);
  const std::size_t decaySteps = totalSteps > c.warmupSteps + 1 ? totalSteps - c.warmupSteps - 1 : 0;
  if (decaySteps == 0) return c.lrInitial;
  const double frac = std::min(1.0, static_cast<double>(step - c.warmupSteps) / static_cast<double>(decaySteps));
  return (1.0 - frac) * c.lrInitial + frac * c.lrFinal;
}

SftStepResult sftStep(PolicyModel& model, Adam& optimizer, std::span<const SftExample> batch, double lr,
                      std::size_t stepIndex, std::optional<std::uint64_t> dropoutSeed) {
  SftStepResult res;
  for (const auto& ex : batch) res.tokens += ex.completion.size();
  auto ids = [&] {
    std::string s;
    for (const auto& ex : batch) s += (s.empty() ? "" : ",") + ex.id;
    return s;
  };
  if (res.tokens == 0) throw ContractViolation("sft batch has no completion tokens");
  const double w = 1.0 / static_cast<double>(res.tokens);
  std::vector<WeightedCompletion> items;
  for (const auto& ex : batch) items.push_back({ex.prompt, ex.completion, w});

  res.loss = -weightedLogProb(model, items, dropoutSeed);
  if (!std::isfinite(res.loss))
    throw NonFiniteError("non-finite sft loss at step " + std::to_string(stepIndex) + " (batch " + ids() + ")");
  // Descent on the NLL is descent along -grad(log-prob).
  for (auto& it : items) it.weight = -w;
  Checkpoint grad = gradLogProbWeighted(model, items, dropoutSeed);
  if (!allFinite(grad))
    throw NonFiniteError("non-finite sft gradient at step " + std::to_string(stepIndex) + " (batch " + ids() + ")");
  optimizer.step(model.mutableParameters(), grad, model.trainableMask(), lr);
  return res;
}

SftReport trainSft(PolicyModel& model, const std::vector<QuestionBucket>& buckets, const SftConfig& config,
                   const std::function<void(std::size_t, const SftStepResult&)>& onStep) {
  validate(config);
  if (config.useAdapters && !model.hasAdapters()) {
    const auto targets = config.adapterTargets.empty() ? model.adaptableTargets() : config.adapterTargets;
    for (std::size_t i = 0; i < targets.size(); ++i)
      model.attachAdapter({targets[i], config.adapterRank, config.adapterAlpha, config.adapterDropout},
                          deriveSeed(config.seed, {0xADA0, i}));
  }
  const std::size_t maxLen = config.maxSeqLen ? std::min(config.maxSeqLen, model.architecture().contextLength)
                                              : model.architecture().contextLength;
  std::size_t streamSize = 0;
  for (const auto& b : buckets)
    if (b.k > 0) streamSize += b.retainedSamples.size();
  const std::size_t perStep = config.batchSize * config.gradAccumulation;
  const std::size_t stepsPerEpoch = (streamSize + perStep - 1) / perStep;
  const std::size_t totalSteps = stepsPerEpoch * config.epochs;

  Adam adam(config.optimizer);
  SftReport report;
  const bool dropout = model.hasAdapters() && config.adapterDropout > 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto stream = curriculumOrder(buckets, deriveSeed(config.seed, {epoch}), config.interleave);
    for (std::size_t start = 0; start < stream.size(); start += perStep) {
      std::vector<SftExample> batch;
      for (std::size_t i = start; i < std::min(stream.size(), start + perStep); ++i) {
        const CoTSample& s = *stream[i].sample;
        std::span<const TokenId> completion = s.completion.tokens;
        if (s.prompt.size() >= maxLen) continue;
        if (s.prompt.size() + completion.size() > maxLen) completion = completion.first(maxLen - s.prompt.size());
        if (completion.empty()) continue;
        batch.push_back({s.questionId, s.prompt, completion});
      }
      if (batch.empty()) continue;
      const std::size_t step = report.steps;
      const double lr = sftLearningRate(config, step, totalSteps);
      const auto dropoutSeed = dropout ? std::optional<std::uint64_t>(deriveSeed(config.seed, {0xD0, step}))
                                       : std::nullopt;
      const SftStepResult r = sftStep(model, adam, batch, lr, step, dropoutSeed);
      report.losses.push_back(r.loss);
      ++report.steps;
      if (onStep) onStep(step, r);
    }
  }
  return report;
}

}  // namespace rlvr
