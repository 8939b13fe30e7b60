#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlvr/llm_client.hpp"

namespace rlvr {

using JudgeClient = TextClient;

struct LabeledOption {
  std::string label;
  std::string text;
  bool operator==(const LabeledOption&) const = default;
};
using OptionList = std::vector<LabeledOption>;

enum class AnswerKind { Numeric, Latex, OptionLabel, FreeText };

struct AnswerText {
  std::string raw;
  AnswerKind kind = AnswerKind::FreeText;

  // Detects the kind; throws ContractViolation when `raw` is blank.
  static AnswerText from(std::string raw);
};

const char* toString(AnswerKind kind);

enum class MatchStage { Exact, Symbolic, Option, Judge, Exhausted };
const char* toString(MatchStage stage);
std::optional<MatchStage> matchStageFromString(std::string_view s);

struct MatchVerdict {
  bool matched = false;
  MatchStage stage = MatchStage::Exhausted;
  std::string detail;
};

// Trim, collapse whitespace, strip an outer \boxed{...} (and $...$, \(...\)),
// strip a trailing period, upper-case a lone option letter A-D.
std::string normalizeAnswer(std::string_view s);

// Option/identifier of an answer: the label of the option whose text the
// answer equals, else the first whitespace token that, with punctuation
// removed, is one of A-D / a-d / 1-4. Letters are returned upper-case.
std::optional<std::string> optionIdentifier(std::string_view answer, const OptionList& options);

// Staged matching, in order: normalized exact match, symbolic equivalence,
// option identifier (only when options are given), judge (only when a
// client is given). Never throws; a judge transport failure yields
// (false, Exhausted) with the failure in `detail`.
MatchVerdict matchAnswers(std::string_view predicted, std::string_view groundTruth,
                          const OptionList& options = {}, JudgeClient* judge = nullptr);

enum class QuestionKind { Mcq, Numerical };

struct JudgeRequest {
  QuestionKind questionKind = QuestionKind::Numerical;
  OptionList options;
  std::string answer1;  // ground truth
  std::string answer2;  // prediction
};

struct JudgePrompt {
  std::string system;
  std::string user;
};

extern const std::string_view kMcqJudgeSystemPrompt;
extern const std::string_view kNumericalJudgeSystemPrompt;

// Throws InvalidSpec ("invalid request") for an MCQ without 2-6 options.
JudgePrompt formatJudgePrompt(const JudgeRequest& request);

// Content of the last \boxed{...}: YES -> true, NO -> false, else nullopt.
std::optional<bool> parseJudgeReply(std::string_view reply);

}  // namespace rlvr
