#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlvr/llm_client.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/verifier.hpp"

namespace rlvr {

struct DifficultyStats {
  std::size_t attempts = 0;
  std::size_t successes = 0;

  // Defined only when attempts > 0.
  std::optional<double> successRate() const;
  bool operator==(const DifficultyStats&) const = default;
};

// One cleaned question. JSONL field names (one JSON object per line):
//   id                 string, required
//   question           string, required
//   answer             string, required, non-blank
//   option_dependent   bool, required
//   diagram_dependent  bool, required
//   language           string, required
//   topic              string, optional (default "")
//   options            [{"label": string, "text": string}], optional
//   stats              {"attempts": uint, "successes": uint}, optional
//   prompt_tokens      [uint], optional; policy-alphabet rendering of the prompt
// Serialization writes fields in this order and omits empty optionals.
struct QuestionRecord {
  std::string id;
  std::string questionText;
  std::string answer;
  bool optionDependent = false;
  bool diagramDependent = false;
  std::string language = "English";
  std::string topic;
  OptionList options;
  std::optional<DifficultyStats> stats;
  std::vector<TokenId> promptTokens;

  bool operator==(const QuestionRecord&) const = default;
};

nlohmann::ordered_json toJson(const QuestionRecord& r);
// Throws ContractViolation on a missing/mistyped field or broken invariant.
QuestionRecord questionFromJson(const nlohmann::json& j);
std::string toJsonLine(const QuestionRecord& r);

void writeQuestions(const std::filesystem::path& path, const std::vector<QuestionRecord>& records);
// Strict reader: any malformed line is an IoError.
std::vector<QuestionRecord> readQuestions(const std::filesystem::path& path);

// Policy prompt for a record: promptTokens when present, else the question
// text followed by '='. Throws ContractViolation if not encodable.
std::vector<TokenId> promptFor(const QuestionRecord& r);

struct SyntheticTaskSpec {
  std::size_t minOperands = 2;
  std::size_t maxOperands = 2;
  std::size_t minDigits = 1;
  std::size_t maxDigits = 1;
  std::string operators = "+";  // subset of "+-*"
  std::uint64_t seed = 0;
};

void validate(const SyntheticTaskSpec& spec);
SyntheticTaskSpec syntheticSpecFromJson(const nlohmann::json& j);
nlohmann::ordered_json toJson(const SyntheticTaskSpec& spec);

// n arithmetic questions. Operand widths are uniform over the digit range;
// a width-w operand is uniform over the w-digit numbers (0-9 for w = 1).
// Answers use exact integer arithmetic with * binding tighter than + and -.
std::vector<QuestionRecord> generateTasks(const SyntheticTaskSpec& spec, std::size_t n);

struct IngestReport {
  std::size_t lines = 0;
  std::size_t accepted = 0;
  // Reason -> count for "diagram", "option", "language", "malformed".
  std::map<std::string, std::size_t> rejected;
  // "line N: message" for malformed lines.
  std::vector<std::string> errors;

  std::size_t rejectedTotal() const;
};

nlohmann::ordered_json toJson(const IngestReport& report);

struct IngestResult {
  std::vector<QuestionRecord> records;
  IngestReport report;
};

// Drops diagram-dependent, option-dependent and non-English records (first
// matching reason, in that order, is reported), moves options embedded as
// trailing "A) ..." / "(2) ..." lines of the question into `options`, and
// records malformed lines without stopping.
IngestResult ingestQuestions(std::istream& in);
IngestResult ingestQuestions(const std::filesystem::path& path);

struct StemAndOptions {
  std::string stem;
  OptionList options;
};
// Splits trailing option lines off a question; needs at least two of them.
StemAndOptions splitEmbeddedOptions(const std::string& question);

struct RawQuestion {
  std::string id;
  std::string text;    // question, possibly with options and MathML
  std::string answer;  // raw answer, possibly an option label
};

// The instruction prompt sent to the external cleaner.
extern const std::string_view kCleaningPrompt;

// Cleaner output fields parsed from the tagged response
// (<question>, <answer>, <option_dependent>, <diagram_dependent>, <language>).
// The answer loses surrounding \( \) / $ $ delimiters. Throws
// CleaningParseError on a missing tag or an unreadable flag.
QuestionRecord parseCleanerResponse(const std::string& id, std::string_view response);

class CleanerClient {
 public:
  virtual ~CleanerClient() = default;
  virtual QuestionRecord clean(const RawQuestion& raw) = 0;
};

// Sends kCleaningPrompt as the system prompt and "Input:\n<text>\nAnswer: <answer>"
// as the user prompt through a TextClient, then parses the tagged reply.
class PromptedCleaner : public CleanerClient {
 public:
  explicit PromptedCleaner(TextClient& client) : client_(client) {}
  QuestionRecord clean(const RawQuestion& raw) override;

 private:
  TextClient& client_;
};

struct CleaningResult {
  std::vector<QuestionRecord> cleaned;
  // id -> failure reason
  std::vector<std::pair<std::string, std::string>> quarantined;
};

CleaningResult cleanAll(CleanerClient& cleaner, const std::vector<RawQuestion>& raws);

}  // namespace rlvr
