#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlvr/optimizer.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/tasks.hpp"
#include "rlvr/verifier.hpp"

namespace rlvr {

struct CoTSample {
  std::string questionId;
  std::vector<TokenId> prompt;
  TokenSequence completion;
  std::string decodedAnswer;  // empty when nothing could be extracted
  bool correct = false;
  bool operator==(const CoTSample&) const = default;
};

// Decodes prompt+completion, extracts the final answer and matches it
// against the record's ground truth.
CoTSample makeSample(const QuestionRecord& q, std::vector<TokenId> prompt, TokenSequence completion,
                     JudgeClient* judge = nullptr);

struct QuestionBucket {
  std::size_t k = 0;
  std::vector<std::string> questionIds;
  std::vector<CoTSample> retainedSamples;
};

struct RejectionConfig {
  std::size_t n = 4;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t maxNewTokens = SIZE_MAX;
};

struct RejectionResult {
  std::size_t n = 0;
  // Index k holds the questions with exactly k correct completions.
  std::vector<QuestionBucket> buckets;
  // Inputs in their original order with stats = {n, k}.
  std::vector<QuestionRecord> annotated;
};

// Groups questions by correct count. Every question contributes its correct
// samples to its bucket, so bucket k retains k * |bucket| samples.
std::vector<QuestionBucket> bucketize(std::size_t n,
                                      const std::vector<std::pair<std::string, std::vector<CoTSample>>>& outcomes);

RejectionResult rejectionSample(const PolicyModel& model, const std::vector<QuestionRecord>& questions,
                                const RejectionConfig& config, JudgeClient* judge = nullptr);

// Bucket-0 questions (stats attached) for RLVR.
std::vector<QuestionRecord> rlvrExport(const RejectionResult& result);

// Count-level accounting of the bucket table.
struct BucketRow {
  std::size_t k = 0;
  std::size_t questions = 0;
  std::size_t totalCoTs = 0;  // k * questions
  std::size_t sftCoTs = 0;    // totalCoTs, or the sampled fraction when k = n
  std::string usage;          // "rlvr", "sft" or "sft-sampled"
};
std::vector<BucketRow> bucketTable(const std::map<std::size_t, std::size_t>& questionsPerK, std::size_t n,
                                   double fractionForFull);

// Copy of the buckets with bucket n reduced to round(fraction * size)
// samples drawn uniformly without replacement (order kept).
std::vector<QuestionBucket> selectForSft(const std::vector<QuestionBucket>& buckets, double fractionForFull,
                                         std::uint64_t seed);

struct CurriculumItem {
  std::size_t k = 0;
  const CoTSample* sample = nullptr;
};

// Stages k = max..1 (bucket 0 never trains); seeded shuffle within a stage.
// With `interleave` the whole stream is shuffled instead.
std::vector<CurriculumItem> curriculumOrder(const std::vector<QuestionBucket>& buckets, std::uint64_t seed,
                                            bool interleave = false);

// Bucket export: one JSON object per question,
//   {"question_id", "k", "prompt": [ids], "completions": [{"tokens", "answer"}]}
// listing the retained (correct) completions.
void writeBuckets(const std::filesystem::path& path, const std::vector<QuestionBucket>& buckets);
std::vector<QuestionBucket> readBuckets(const std::filesystem::path& path);

struct SftConfig {
  std::size_t epochs = 3;
  std::size_t batchSize = 1;
  std::size_t gradAccumulation = 16;
  double lrInitial = 2e-5;
  double lrFinal = 2e-7;
  std::size_t warmupSteps = 5;
  std::size_t maxSeqLen = 0;  // 0: the model's context length
  bool useAdapters = true;
  std::size_t adapterRank = 4;
  double adapterAlpha = 4.0;
  double adapterDropout = 0.1;
  std::vector<std::string> adapterTargets;  // empty: every adaptable target
  AdamConfig optimizer{0.9, 0.999, 1e-8, 0.01};
  double sampleFractionForFull = 0.10;
  double rejectionTemperature = 1.0;
  std::size_t rejectionN = 4;
  bool interleave = false;
  std::uint64_t seed = 0;
};

void validate(const SftConfig& config);
SftConfig sftConfigFromJson(const nlohmann::json& j);
nlohmann::ordered_json toJson(const SftConfig& config);

// Warmup rises linearly to lrInitial over warmupSteps, then decays linearly
// to lrFinal at the last step.
double sftLearningRate(const SftConfig& config, std::size_t step, std::size_t totalSteps);

struct SftExample {
  std::string id;
  std::span<const TokenId> prompt;
  std::span<const TokenId> completion;
};

struct SftStepResult {
  double loss = 0.0;  // mean per-token negative log-likelihood before the update
  std::size_t tokens = 0;
};

// One optimizer step on the mean per-token NLL of `batch`. Adapter dropout
// is active when `dropoutSeed` is set. Throws NonFiniteError naming the step
// and the batch ids.
SftStepResult sftStep(PolicyModel& model, Adam& optimizer, std::span<const SftExample> batch, double lr,
                      std::size_t stepIndex, std::optional<std::uint64_t> dropoutSeed = std::nullopt);

struct SftReport {
  std::size_t steps = 0;
  std::vector<double> losses;
};

// Attaches adapters when configured (and none are present), then trains
// for `epochs` passes over the curriculum stream, one optimizer step per
// batchSize * gradAccumulation examples.
SftReport trainSft(PolicyModel& model, const std::vector<QuestionBucket>& buckets, const SftConfig& config,
                   const std::function<void(std::size_t, const SftStepResult&)>& onStep = {});

}  // namespace rlvr
