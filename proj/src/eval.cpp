#include "rlvr/eval.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include "rlvr/alphabet.hpp"
#include "rlvr/error.hpp"

namespace rlvr {

QuestionResult evaluateQuestion(const PolicyModel& model, const QuestionRecord& q, JudgeClient* judge,
                                std::size_t maxNewTokens) {
  QuestionResult row;
  row.id = q.id;
  const std::vector<TokenId> prompt = promptFor(q);
  const TokenSequence completion = greedyDecode(model, prompt, maxNewTokens);
  row.completionTokens = completion.size();

  std::vector<TokenId> full = prompt;
  full.insert(full.end(), completion.tokens.begin(), completion.tokens.end());
  const auto answer = extractAnswer(alphabet::decode(full));
  if (!answer) {
    row.stage = MatchStage::Exhausted;
    return row;
  }
  const MatchVerdict v = matchAnswers(*answer, q.answer, q.options, judge);
  row.matched = v.matched;
  row.stage = v.stage;
  return row;
}

void summarize(EvalReport& report) {
  std::size_t matched = 0, tokens = 0;
  for (const auto& r : report.perQuestion) {
    matched += r.matched ? 1 : 0;
    tokens += r.completionTokens;
  }
  const double n = static_cast<double>(report.perQuestion.size());
  report.passAt1 = report.perQuestion.empty() ? 0.0 : static_cast<double>(matched) / n;
  report.meanTokens = report.perQuestion.empty() ? 0.0 : static_cast<double>(tokens) / n;
}

EvalReport evaluate(const PolicyModel& model, const std::vector<QuestionRecord>& questions,
                    const EvalOptions& options) {
  EvalReport report;
  report.datasetId = options.datasetId;
  report.modelCheckpointRef = options.modelRef;
  report.perQuestion.resize(questions.size());

  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, questions.size()));
  auto work = [&](std::size_t begin) {
    for (std::size_t i = begin; i < questions.size(); i += threads)
      report.perQuestion[i] = evaluateQuestion(model, questions[i], options.judge, options.maxNewTokens);
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  summarize(report);
  return report;
}

nlohmann::ordered_json toJson(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["dataset_id"] = report.datasetId;
  j["model_checkpoint"] = report.modelCheckpointRef;
  j["pass_at_1"] = report.passAt1;
  j["mean_tokens"] = report.meanTokens;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : report.perQuestion)
    rows.push_back({{"id", r.id}, {"matched", r.matched}, {"stage", toString(r.stage)}, {"tokens", r.completionTokens}});
  j["questions"] = std::move(rows);
  return j;
}

EvalReport reportFromJson(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.datasetId = j.at("dataset_id").get<std::string>();
    r.modelCheckpointRef = j.at("model_checkpoint").get<std::string>();
    r.passAt1 = j.at("pass_at_1").get<double>();
    r.meanTokens = j.at("mean_tokens").get<double>();
    for (const auto& q : j.at("questions")) {
      QuestionResult row;
      row.id = q.at("id").get<std::string>();
      row.matched = q.at("matched").get<bool>();
      const auto stage = matchStageFromString(q.at("stage").get<std::string>());
      if (!stage) throw ContractViolation("unknown stage " + q.at("stage").dump());
      row.stage = *stage;
      row.completionTokens = q.at("tokens").get<std::size_t>();
      r.perQuestion.push_back(std::move(row));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("malformed eval report: ") + e.what());
  }
}

namespace {

std::string csvField(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string renderReport(const EvalReport& report, ReportFormat format) {
  if (format == ReportFormat::Json) return toJson(report).dump(2) + "\n";
  std::ostringstream out;
  out << "id,matched,stage,tokens\n";
  for (const auto& r : report.perQuestion)
    out << csvField(r.id) << ',' << (r.matched ? "true" : "false") << ',' << toString(r.stage) << ','
        << r.completionTokens << '\n';
  return out.str();
}

void exportReport(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open report for writing");
  out << renderReport(report, format);
  if (!out) throw IoError(path.string(), "write failed");
}

EvalReport readReport(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open report");
  try {
    return reportFromJson(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string(), e.what());
  }
}

}  // namespace rlvr
