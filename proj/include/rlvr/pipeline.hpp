#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/rl_trainer.hpp"
#include "rlvr/sft.hpp"
#include "rlvr/tasks.hpp"
#include "rlvr/verifier.hpp"

namespace rlvr {

// Sibling parents for the merge stage: one shared base trained briefly on
// ground-truth answers, then each parent fine-tuned on its own slice
// (question index mod parents) of a synthetic training set.
struct BootstrapConfig {
  std::size_t parents = 3;
  std::size_t questions = 300;
  std::size_t baseSteps = 40;
  std::size_t finetuneSteps = 20;
  std::size_t batchSize = 16;
  double learningRate = 0.01;
  double initScale = 1.0;
};

BootstrapConfig bootstrapConfigFromJson(const nlohmann::json& j);

// Mean per-token NLL training on (prompt, answer + end token) pairs.
void trainOnGroundTruth(PolicyModel& model, const std::vector<QuestionRecord>& questions, std::size_t steps,
                        std::size_t batchSize, double lr, std::uint64_t seed);

std::vector<Checkpoint> bootstrapParents(const Architecture& arch, const BootstrapConfig& config,
                                         const SyntheticTaskSpec& tasks, std::uint64_t seed);

struct CurateConfig {
  SyntheticTaskSpec trainSpec;
  std::size_t trainCount = 400;
  SyntheticTaskSpec heldoutSpec;
  std::size_t heldoutCount = 100;
  std::optional<std::filesystem::path> ingestPath;
};

struct EvalStageConfig {
  std::size_t maxNewTokens = SIZE_MAX;
  bool judge = false;
};

// Config keys (JSON):
//   seed, log_level, paths.work_dir,
//   model {embed_dim, hidden_dim, layers, window, context_length, init_scale},
//   merge {weights, inputs?, allow-negative-weights, bootstrap {...}},
//   curate {train {spec keys, count}, heldout {spec keys, count}, ingest?},
//   sft {SftConfig keys}, rlvr {RlvrConfig keys, pool: "all" | "bucket0"},
//   eval {max_new_tokens, judge}
// Stage seeds are derived from `seed`; seeds inside sub-configs are ignored.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string logLevel = "info";
  std::filesystem::path workDir;
  Architecture arch;
  std::vector<double> mergeWeights;
  std::vector<std::filesystem::path> mergeInputs;  // empty: bootstrap parents
  bool allowNegativeWeights = false;
  BootstrapConfig bootstrap;
  CurateConfig curate;
  SftConfig sft;
  RlvrConfig rlvr;
  std::string rlvrPool = "all";
  EvalStageConfig eval;
  // Hex SHA-256 of the canonical config JSON without "paths".
  std::string configHash;
};

// Relative paths resolve against the config file's directory; `workDir`
// overrides paths.work_dir.
PipelineConfig pipelineConfigFromJson(const nlohmann::json& j, const std::filesystem::path& baseDir);
PipelineConfig loadPipelineConfig(const std::filesystem::path& path,
                                  const std::optional<std::filesystem::path>& workDir = std::nullopt);

enum class Stage { Merge, Curate, SftSample, SftTrain, Rlvr, Eval };
const char* toString(Stage s);
std::vector<Stage> parseStages(const std::vector<std::string>& names);
std::vector<Stage> allStages();

// Throws PlanError when stages are out of order, repeated, or need an
// artifact that neither an earlier requested stage nor the work dir has.
void checkPlan(const PipelineConfig& config, const std::vector<Stage>& stages);

struct PipelineResult {
  nlohmann::ordered_json manifest;
  // Held-out pass@1 per evaluated checkpoint ("merged", "sft", "rlvr").
  std::map<std::string, double> passAt1;
};

// Runs the stages in order inside workDir and writes manifest.json
// (deterministic) and timings.json (wall-clock, listed as volatile).
// A failing stage raises StageFailure.
PipelineResult runPipeline(const PipelineConfig& config, const std::vector<Stage>& stages,
                           JudgeClient* judge = nullptr);

}  // namespace rlvr
