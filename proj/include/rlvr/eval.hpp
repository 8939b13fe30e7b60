#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/tasks.hpp"
#include "rlvr/verifier.hpp"

namespace rlvr {

struct QuestionResult {
  std::string id;
  bool matched = false;
  MatchStage stage = MatchStage::Exhausted;
  std::size_t completionTokens = 0;
  bool operator==(const QuestionResult&) const = default;
};

struct EvalReport {
  std::string datasetId;
  std::vector<QuestionResult> perQuestion;
  double passAt1 = 0.0;
  double meanTokens = 0.0;
  std::string modelCheckpointRef;
  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  std::string datasetId;
  std::string modelRef;
  JudgeClient* judge = nullptr;
  std::size_t maxNewTokens = SIZE_MAX;
  // Questions are split across this many threads; results keep dataset order.
  std::size_t threads = 1;
};

// Greedy completion of one question followed by answer extraction and
// matching. Completion tokens include the end token when one was emitted.
QuestionResult evaluateQuestion(const PolicyModel& model, const QuestionRecord& q, JudgeClient* judge = nullptr,
                                std::size_t maxNewTokens = SIZE_MAX);

EvalReport evaluate(const PolicyModel& model, const std::vector<QuestionRecord>& questions,
                    const EvalOptions& options = {});

// Recomputes passAt1 and meanTokens from the rows (0 for an empty report).
void summarize(EvalReport& report);

enum class ReportFormat { Json, Csv };

nlohmann::ordered_json toJson(const EvalReport& report);
EvalReport reportFromJson(const nlohmann::json& j);
// CSV header: id,matched,stage,tokens
std::string renderReport(const EvalReport& report, ReportFormat format);
void exportReport(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);
EvalReport readReport(const std::filesystem::path& path);

}  // namespace rlvr
