#include "rlvr/verifier.hpp"

#include <algorithm>
#include <cctype>

#include "rlvr/error.hpp"
#include "rlvr/expr.hpp"

namespace rlvr {

const std::string_view kMcqJudgeSystemPrompt =
    "You are checking an MCQ. Given the list of options, determine if answer 1 and answer 2 "
    "are the same. Answer 1 is the same as answer 2 only if all the options match. Reason "
    "step-by-step and put the final answer YES or NO in \\boxed{}.";

const std::string_view kNumericalJudgeSystemPrompt =
    "You are checking an exam. For a given question, determine if answer 1 and answer 2 are "
    "the same. Since the answers are for the same question, you can assume similar context for "
    "both answers and make appropriate assumptions when checking if they are the same. Reason "
    "step-by-step and put the final answerYES or NO in \\boxed{}.";

namespace {

bool isSpace(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && isSpace(s.front())) s.remove_prefix(1);
  while (!s.empty() && isSpace(s.back())) s.remove_suffix(1);
  return s;
}

std::string collapseWhitespace(std::string_view s) {
  std::string out;
  bool pendingSpace = false;
  for (char c : trim(s)) {
    if (isSpace(c)) {
      pendingSpace = true;
      continue;
    }
    if (pendingSpace) out.push_back(' ');
    pendingSpace = false;
    out.push_back(c);
  }
  return out;
}

// Index one past the brace matching the '{' at `open`, or npos.
std::size_t matchBrace(std::string_view s, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') ++depth;
    if (s[i] == '}' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

bool stripWrapper(std::string& s) {
  constexpr std::string_view boxed = "\\boxed{";
  if (s.starts_with(boxed) && matchBrace(s, boxed.size() - 1) == s.size()) {
    s = std::string(trim(std::string_view(s).substr(boxed.size(), s.size() - boxed.size() - 1)));
    return true;
  }
  auto strip = [&](std::string_view open, std::string_view close) {
    if (s.size() >= open.size() + close.size() && s.starts_with(open) && s.ends_with(close)) {
      s = std::string(trim(std::string_view(s).substr(open.size(), s.size() - open.size() - close.size())));
      return true;
    }
    return false;
  };
  return strip("\\(", "\\)") || strip("\\[", "\\]") || strip("$$", "$$") || strip("$", "$");
}

bool isOptionLetter(std::string_view s) {
  return s.size() == 1 && ((s[0] >= 'A' && s[0] <= 'D') || (s[0] >= 'a' && s[0] <= 'd'));
}

bool isOptionToken(std::string_view s) {
  return isOptionLetter(s) || (s.size() == 1 && s[0] >= '1' && s[0] <= '4');
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

bool isNumericLiteral(std::string_view s) {
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) s.remove_prefix(1);
  if (s.empty()) return false;
  bool digit = false, dot = false;
  for (char c : s) {
    if (c >= '0' && c <= '9') {
      digit = true;
    } else if (c == '.' && !dot) {
      dot = true;
    } else {
      return false;
    }
  }
  return digit;
}

std::optional<ExprNode> tryParse(std::string_view s) {
  try {
    return parseLatexSubset(s);
  } catch (const ParseError&) {
    return std::nullopt;
  }
}

}  // namespace

const char* toString(AnswerKind kind) {
  switch (kind) {
    case AnswerKind::Numeric: return "numeric";
    case AnswerKind::Latex: return "latex";
    case AnswerKind::OptionLabel: return "optionLabel";
    case AnswerKind::FreeText: return "freeText";
  }
  return "freeText";
}

AnswerText AnswerText::from(std::string raw) {
  const std::string norm = normalizeAnswer(raw);
  if (norm.empty()) throw ContractViolation("answer text is blank");
  AnswerKind kind = AnswerKind::FreeText;
  if (isOptionLetter(norm)) {
    kind = AnswerKind::OptionLabel;
  } else if (isNumericLiteral(norm)) {
    kind = AnswerKind::Numeric;
  } else if (tryParse(norm)) {
    kind = AnswerKind::Latex;
  }
  return {std::move(raw), kind};
}

const char* toString(MatchStage stage) {
  switch (stage) {
    case MatchStage::Exact: return "exact";
    case MatchStage::Symbolic: return "symbolic";
    case MatchStage::Option: return "option";
    case MatchStage::Judge: return "judge";
    case MatchStage::Exhausted: return "exhausted";
  }
  return "exhausted";
}

std::optional<MatchStage> matchStageFromString(std::string_view s) {
  for (auto st : {MatchStage::Exact, MatchStage::Symbolic, MatchStage::Option, MatchStage::Judge,
                  MatchStage::Exhausted})
    if (s == toString(st)) return st;
  return std::nullopt;
}

std::string normalizeAnswer(std::string_view input) {
  std::string s = collapseWhitespace(input);
  for (;;) {
    bool changed = stripWrapper(s);
    if (!s.empty() && s.back() == '.') {
      s.pop_back();
      s = std::string(trim(s));
      changed = true;
    }
    if (!changed) break;
  }
  if (isOptionLetter(s)) s = upper(s);
  return s;
}

std::optional<std::string> optionIdentifier(std::string_view answer, const OptionList& options) {
  const std::string norm = normalizeAnswer(answer);
  for (const auto& opt : options)
    if (!norm.empty() && normalizeAnswer(opt.text) == norm) return upper(opt.label);
  std::size_t i = 0;
  while (i < norm.size()) {
    while (i < norm.size() && norm[i] == ' ') ++i;
    std::size_t j = i;
    while (j < norm.size() && norm[j] != ' ') ++j;
    std::string token;
    for (std::size_t k = i; k < j; ++k)
      if (!std::ispunct(static_cast<unsigned char>(norm[k]))) token.push_back(norm[k]);
    if (isOptionToken(token)) return upper(token);
    i = j;
  }
  return std::nullopt;
}

MatchVerdict matchAnswers(std::string_view predicted, std::string_view groundTruth,
                          const OptionList& options, JudgeClient* judge) {
  try {
    const std::string p = normalizeAnswer(predicted);
    const std::string g = normalizeAnswer(groundTruth);
    if (!p.empty() && p == g) return {true, MatchStage::Exact, "normalized strings equal"};
    if (!p.empty() && !g.empty()) {
      auto ep = tryParse(p);
      auto eg = tryParse(g);
      if (ep && eg && symbolicEquivalent(*ep, *eg)) return {true, MatchStage::Symbolic, "expressions equivalent"};
    }
    if (!options.empty()) {
      auto ip = optionIdentifier(p, options);
      auto ig = optionIdentifier(g, options);
      if (ip && ig && *ip == *ig) return {true, MatchStage::Option, "identifier " + *ip};
    }
    if (judge != nullptr) {
      JudgeRequest req;
      req.questionKind = options.empty() ? QuestionKind::Numerical : QuestionKind::Mcq;
      req.options = options;
      req.answer1 = std::string(groundTruth);
      req.answer2 = std::string(predicted);
      try {
        const auto prompt = formatJudgePrompt(req);
        const std::string reply = judge->query(prompt.system, prompt.user);
        const auto verdict = parseJudgeReply(reply);
        if (!verdict) return {false, MatchStage::Judge, "judge reply had no boxed YES/NO"};
        return {*verdict, MatchStage::Judge, *verdict ? "judge said YES" : "judge said NO"};
      } catch (const std::exception& e) {
        return {false, MatchStage::Exhausted, std::string("judge failure: ") + e.what()};
      }
    }
    return {false, MatchStage::Exhausted, "no stage matched"};
  } catch (const std::exception& e) {
    return {false, MatchStage::Exhausted, std::string("matching error: ") + e.what()};
  }
}

JudgePrompt formatJudgePrompt(const JudgeRequest& req) {
  JudgePrompt out;
  if (req.questionKind == QuestionKind::Mcq) {
    if (req.options.size() < 2 || req.options.size() > 6)
      throw InvalidSpec("invalid request: MCQ judge request needs 2-6 options");
    out.system = std::string(kMcqJudgeSystemPrompt);
    out.user = "Options:\n";
    for (const auto& opt : req.options) out.user += opt.label + ": " + opt.text + "\n";
  } else {
    out.system = std::string(kNumericalJudgeSystemPrompt);
  }
  out.user += "answer 1: " + req.answer1 + "\n";
  out.user += "answer 2: " + req.answer2;
  return out;
}

std::optional<bool> parseJudgeReply(std::string_view reply) {
  constexpr std::string_view boxed = "\\boxed{";
  const auto at = reply.rfind(boxed);
  if (at == std::string_view::npos) return std::nullopt;
  const auto end = matchBrace(reply, at + boxed.size() - 1);
  if (end == std::string_view::npos) return std::nullopt;
  const std::string content = upper(std::string(trim(reply.substr(at + boxed.size(), end - at - boxed.size() - 1))));
  if (content == "YES") return true;
  if (content == "NO") return false;
  return std::nullopt;
}

}  // namespace rlvr
