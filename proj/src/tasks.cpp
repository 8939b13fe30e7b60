#include "rlvr/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "rlvr/alphabet.hpp"
#include "rlvr/error.hpp"
#include "rlvr/random.hpp"

namespace rlvr {

const std::string_view kCleaningPrompt = R"PROMPT(Clean and standardize math questions by removing multiple-choice options, normalizing 
the answer format, identifying dependencies, and determining the language. For any 
answers expressed in MathML, convert them to LaTeX. Conversion of MathML in the 
**question** is *not required* (but preserve LaTeX if already present). 
Additionally, provide a clear **step-by-step reasoning** explaining how each part of 
the output was derived.

### Instructions:

1. Identify and extract the core question text:
    * Remove all multiple-choice options (e.g., A–D or 1–4), ensuring the main question 
    remains grammatically and semantically intact.
    * Preserve existing LaTeX in the question.
    * Do **not** convert MathML in the question. It may be retained as-is.

2. Normalize the answer:
    * If the answer is given as an option label (e.g., "Answer: B"), replace it with the 
    corresponding value from the provided options.
    * If the answer is already a value, retain it.
    * If the answer is in MathML, convert it to LaTeX.

3. Determine dependency flags:
    * **Option-dependent:** Is the question understandable and solvable without access 
    to the answer options? Mark `True` if the question lacks key information without 
    them; otherwise, `False`.
    * **Diagram-dependent:** Does the question reference or rely on a diagram, figure, or 
    visual element? Mark `True` or `False`.

4. Identify the language:
    * Detect and report the language of the question text (e.g., `English`, `Hindi`, 
    `Tamil`, etc.).

5. Provide reasoning:
    * For each output field (question, answer, flags, language), include a clear 
    explanation of how the output was determined.
    * The reasoning should follow a logical step-by-step format, but does **not** need to 
    be wrapped in any special `<reason>` block.

# Output Format

<question> cleaned question </question>  
<answer> cleaned answer </answer>  
<option_dependent> True/False </option_dependent>  
<diagram_dependent> True/False </diagram_dependent>  
<language> detected language </language>

* All math in the **answer** must be in LaTeX.
* There should be **no references** to original option labels (e.g., "A", "1", or
"Option B").
* Ensure the cleaned question is coherent, self-contained, and grammatically correct.
* The reasoning can be in free-text form and must explain how each part of the output was 
derived.

### Example 1
Input:
What is the derivative of \(x^2 + 3x + 5\)?  
A) \(2x + 3\)  
B) \(x + 3\)  
C) \(x^2 + 3\)  
D) \(2x + 5\)  
Answer: A  

Output:
<question> What is the derivative of \(x^2 + 3x + 5\)? </question>  
<answer> \(2x + 3\) </answer>  
<option_dependent> False </option_dependent>  
<diagram_dependent> False </diagram_dependent>  
<language> English </language>

### Example 2
Input:
<p>Simplify the following expression:</p>
<math xmlns="http://www.w3.org/1998/Math/MathML">
  <mfrac>
    <msqrt>
      <msup><mi>a</mi><mn>2</mn></msup>
    </msqrt>
    <mi>a</mi>
  </mfrac>
</math>

<p>Options:</p>
1) <math xmlns="http://www.w3.org/1998/Math/MathML"><msqrt><mi>a</mi></msqrt></math>  
2) <math xmlns="http://www.w3.org/1998/Math/MathML"><mi>a</mi></math>  
3) <math xmlns="http://www.w3.org/1998/Math/MathML"><mfrac><mn>1</mn><mi>a</mi>
</mfrac></math>  
4) <math xmlns="http://www.w3.org/1998/Math/MathML"><mn>1</mn></math>

Answer: 1

Output:
<question> Simplify the following expression:
<math xmlns="http://www.w3.org/1998/Math/MathML">
  <mfrac>
    <msqrt>
      <msup><mi>a</mi><mn>2</mn></msup>
    </msqrt>
    <mi>a</mi>
  </mfrac>
</math>
</question>  
<answer> \sqrt{a} </answer>  
<option_dependent> False </option_dependent>  
<diagram_dependent> False </diagram_dependent>  
<language> English </language>
)PROMPT";

namespace {

std::string trimCopy(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::string toString128(__int128 v) {
  if (v == 0) return "0";
  const bool neg = v < 0;
  unsigned __int128 u = neg ? static_cast<unsigned __int128>(-(v + 1)) + 1 : static_cast<unsigned __int128>(v);
  std::string out;
  while (u > 0) {
    out.push_back(static_cast<char>('0' + static_cast<int>(u % 10)));
    u /= 10;
  }
  if (neg) out.push_back('-');
  std::reverse(out.begin(), out.end());
  return out;
}

std::int64_t pow10(std::size_t w) {
  std::int64_t p = 1;
  for (std::size_t i = 0; i < w; ++i) p *= 10;
  return p;
}

template <typename T>
T required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ContractViolation(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ContractViolation(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

std::optional<double> DifficultyStats::successRate() const {
  if (attempts == 0) return std::nullopt;
  return static_cast<double>(successes) / static_cast<double>(attempts);
}

nlohmann::ordered_json toJson(const QuestionRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["question"] = r.questionText;
  j["answer"] = r.answer;
  j["option_dependent"] = r.optionDependent;
  j["diagram_dependent"] = r.diagramDependent;
  j["language"] = r.language;
  if (!r.topic.empty()) j["topic"] = r.topic;
  if (!r.options.empty()) {
    auto opts = nlohmann::ordered_json::array();
    for (const auto& o : r.options) opts.push_back({{"label", o.label}, {"text", o.text}});
    j["options"] = std::move(opts);
  }
  if (r.stats) j["stats"] = {{"attempts", r.stats->attempts}, {"successes", r.stats->successes}};
  if (!r.promptTokens.empty()) j["prompt_tokens"] = r.promptTokens;
  return j;
}

QuestionRecord questionFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractViolation("record is not a JSON object");
  QuestionRecord r;
  r.id = required<std::string>(j, "id");
  r.questionText = required<std::string>(j, "question");
  r.answer = required<std::string>(j, "answer");
  if (trimCopy(r.answer).empty()) throw ContractViolation("answer is blank");
  r.optionDependent = required<bool>(j, "option_dependent");
  r.diagramDependent = required<bool>(j, "diagram_dependent");
  r.language = required<std::string>(j, "language");
  if (j.contains("topic")) r.topic = required<std::string>(j, "topic");
  if (j.contains("options")) {
    const auto& opts = j.at("options");
    if (!opts.is_array()) throw ContractViolation("field 'options' has the wrong type");
    for (const auto& o : opts)
      r.options.push_back({required<std::string>(o, "label"), required<std::string>(o, "text")});
  }
  if (j.contains("stats")) {
    const auto& s = j.at("stats");
    DifficultyStats st{required<std::size_t>(s, "attempts"), required<std::size_t>(s, "successes")};
    if (st.successes > st.attempts) throw ContractViolation("stats.successes exceeds stats.attempts");
    r.stats = st;
  }
  if (j.contains("prompt_tokens")) r.promptTokens = required<std::vector<TokenId>>(j, "prompt_tokens");
  return r;
}

std::string toJsonLine(const QuestionRecord& r) { return toJson(r).dump(); }

void writeQuestions(const std::filesystem::path& path, const std::vector<QuestionRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  for (const auto& r : records) out << toJsonLine(r) << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<QuestionRecord> readQuestions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open question file");
  std::vector<QuestionRecord> out;
  std::string line;
  std::size_t lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (trimCopy(line).empty()) continue;
    try {
      out.push_back(questionFromJson(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw IoError(path.string(), "line " + std::to_string(lineNo) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TokenId> promptFor(const QuestionRecord& r) {
  if (!r.promptTokens.empty()) return r.promptTokens;
  return alphabet::encode(r.questionText + "=");
}

void validate(const SyntheticTaskSpec& s) {
  if (s.minOperands < 2 || s.minOperands > s.maxOperands || s.maxOperands > 6)
    throw InvalidSpec("operand count range must satisfy 2 <= min <= max <= 6");
  if (s.minDigits < 1 || s.minDigits > s.maxDigits || s.maxDigits > 6)
    throw InvalidSpec("digit range must satisfy 1 <= min <= max <= 6");
  if (s.operators.empty()) throw InvalidSpec("at least one operator is required");
  for (char c : s.operators)
    if (c != '+' && c != '-' && c != '*') throw InvalidSpec(std::string("unsupported operator ") + c);
}

SyntheticTaskSpec syntheticSpecFromJson(const nlohmann::json& j) {
  SyntheticTaskSpec s;
  s.minOperands = j.value("min_operands", s.minOperands);
  s.maxOperands = j.value("max_operands", s.maxOperands);
  s.minDigits = j.value("min_digits", s.minDigits);
  s.maxDigits = j.value("max_digits", s.maxDigits);
  s.operators = j.value("operators", s.operators);
  s.seed = j.value("seed", s.seed);
  validate(s);
  return s;
}

nlohmann::ordered_json toJson(const SyntheticTaskSpec& s) {
  return {{"min_operands", s.minOperands}, {"max_operands", s.maxOperands}, {"min_digits", s.minDigits},
          {"max_digits", s.maxDigits},     {"operators", s.operators},      {"seed", s.seed}};
}

std::vector<QuestionRecord> generateTasks(const SyntheticTaskSpec& spec, std::size_t n) {
  validate(spec);
  if (n == 0) throw ContractViolation("generateTasks requires n >= 1");
  std::vector<QuestionRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Per-item stream: a shorter run is a prefix of a longer one.
    Rng rng(deriveSeed(spec.seed, {i}));
    const std::size_t count = spec.minOperands + rng.below(spec.maxOperands - spec.minOperands + 1);
    std::vector<std::int64_t> operands;
    std::string ops;
    std::size_t widest = 0;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t w = spec.minDigits + rng.below(spec.maxDigits - spec.minDigits + 1);
      widest = std::max(widest, w);
      const std::int64_t lo = w == 1 ? 0 : pow10(w - 1);
      const std::int64_t span = pow10(w) - lo;
      operands.push_back(lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(span))));
      if (k + 1 < count) ops.push_back(spec.operators[rng.below(spec.operators.size())]);
    }
    // '*' binds tighter: fold products into signed terms, then sum.
    __int128 total = 0, term = operands[0];
    int sign = 1;
    std::string display = std::to_string(operands[0]);
    for (std::size_t k = 0; k < ops.size(); ++k) {
      display += ops[k];
      display += std::to_string(operands[k + 1]);
      if (ops[k] == '*') {
        term *= operands[k + 1];
      } else {
        total += sign * term;
        sign = ops[k] == '+' ? 1 : -1;
        term = operands[k + 1];
      }
    }
    total += sign * term;

    QuestionRecord r;
    r.id = "syn-" + std::to_string(spec.seed) + "-" + std::to_string(i);
    r.questionText = display;
    r.answer = toString128(total);
    r.language = "English";
    r.topic = "arith/ops=" + std::to_string(count) + "/digits=" + std::to_string(widest);
    r.promptTokens = alphabet::encode(display + "=");
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t IngestReport::rejectedTotal() const {
  std::size_t n = 0;
  for (const auto& [reason, count] : rejected) n += count;
  return n;
}

nlohmann::ordered_json toJson(const IngestReport& r) {
  nlohmann::ordered_json j;
  j["lines"] = r.lines;
  j["accepted"] = r.accepted;
  nlohmann::ordered_json rej = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.rejected) rej[k] = v;
  j["rejected"] = std::move(rej);
  j["errors"] = r.errors;
  return j;
}

StemAndOptions splitEmbeddedOptions(const std::string& question) {
  std::vector<std::string> lines;
  {
    std::istringstream ss(question);
    std::string line;
    while (std::getline(ss, line)) lines.push_back(line);
  }
  while (!lines.empty() && trimCopy(lines.back()).empty()) lines.pop_back();

  auto parseOption = [](const std::string& raw) -> std::optional<LabeledOption> {
    std::string_view s = raw;
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    bool paren = false;
    if (!s.empty() && s.front() == '(') {
      paren = true;
      s.remove_prefix(1);
    }
    if (s.size() < 3) return std::nullopt;
    const char label = s[0];
    const bool ok = (label >= 'A' && label <= 'D') || (label >= 'a' && label <= 'd') ||
                    (label >= '1' && label <= '4');
    if (!ok) return std::nullopt;
    const char sep = s[1];
    if (paren ? sep != ')' : (sep != ')' && sep != '.' && sep != ':')) return std::nullopt;
    if (!std::isspace(static_cast<unsigned char>(s[2]))) return std::nullopt;
    std::string text = trimCopy(s.substr(3));
    if (text.empty()) return std::nullopt;
    return LabeledOption{std::string(1, label), std::move(text)};
  };

  std::size_t first = lines.size();
  OptionList opts;
  while (first > 0) {
    auto o = parseOption(lines[first - 1]);
    if (!o) break;
    opts.insert(opts.begin(), std::move(*o));
    --first;
  }
  if (opts.size() < 2) return {question, {}};
  std::size_t stemEnd = first;
  if (stemEnd > 0) {
    std::string header = trimCopy(lines[stemEnd - 1]);
    if (header == "Options:" || header == "<p>Options:</p>") --stemEnd;
  }
  std::string stem;
  for (std::size_t i = 0; i < stemEnd; ++i) {
    if (i) stem += '\n';
    stem += lines[i];
  }
  while (!stem.empty() && std::isspace(static_cast<unsigned char>(stem.back()))) stem.pop_back();
  return {stem, std::move(opts)};
}

IngestResult ingestQuestions(std::istream& in) {
  IngestResult res;
  std::string line;
  std::size_t lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (trimCopy(line).empty()) continue;
    ++res.report.lines;
    QuestionRecord r;
    try {
      r = questionFromJson(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      ++res.report.rejected["malformed"];
      res.report.errors.push_back("line " + std::to_string(lineNo) + ": " + e.what());
      continue;
    }
    if (r.diagramDependent) {
      ++res.report.rejected["diagram"];
      continue;
    }
    if (r.optionDependent) {
      ++res.report.rejected["option"];
      continue;
    }
    if (r.language != "English") {
      ++res.report.rejected["language"];
      continue;
    }
    if (r.options.empty()) {
      auto split = splitEmbeddedOptions(r.questionText);
      if (!split.options.empty()) {
        r.questionText = std::move(split.stem);
        r.options = std::move(split.options);
      }
    }
    res.records.push_back(std::move(r));
    ++res.report.accepted;
  }
  return res;
}

IngestResult ingestQuestions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open question file");
  return ingestQuestions(in);
}

QuestionRecord parseCleanerResponse(const std::string& id, std::string_view response) {
  auto tag = [&](const std::string& name) {
    const std::string open = "<" + name + ">", close = "</" + name + ">";
    const auto a = response.find(open);
    if (a == std::string_view::npos) throw CleaningParseError("missing <" + name + "> tag");
    const auto b = response.find(close, a + open.size());
    if (b == std::string_view::npos) throw CleaningParseError("missing </" + name + "> tag");
    return trimCopy(response.substr(a + open.size(), b - a - open.size()));
  };
  auto flag = [&](const std::string& name) {
    std::string v = tag(name);
    for (char& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (v == "true") return true;
    if (v == "false") return false;
    throw CleaningParseError("unreadable flag in <" + name + ">: " + v);
  };
  QuestionRecord r;
  r.id = id;
  r.questionText = tag("question");
  std::string answer = tag("answer");
  for (auto [open, close] : {std::pair{"\\(", "\\)"}, std::pair{"\\[", "\\]"}, std::pair{"$", "$"}}) {
    const std::string_view o = open, c = close;
    if (answer.size() >= o.size() + c.size() && answer.starts_with(o) && answer.ends_with(c)) {
      answer = trimCopy(std::string_view(answer).substr(o.size(), answer.size() - o.size() - c.size()));
      break;
    }
  }
  if (answer.empty()) throw CleaningParseError("empty <answer>");
  r.answer = std::move(answer);
  r.optionDependent = flag("option_dependent");
  r.diagramDependent = flag("diagram_dependent");
  r.language = tag("language");
  return r;
}

QuestionRecord PromptedCleaner::clean(const RawQuestion& raw) {
  const std::string user = "Input:\n" + raw.text + "\nAnswer: " + raw.answer;
  return parseCleanerResponse(raw.id, client_.query(std::string(kCleaningPrompt), user));
}

CleaningResult cleanAll(CleanerClient& cleaner, const std::vector<RawQuestion>& raws) {
  CleaningResult out;
  for (const auto& raw : raws) {
    try {
      out.cleaned.push_back(cleaner.clean(raw));
    } catch (const CleaningParseError& e) {
      out.quarantined.emplace_back(raw.id, e.what());
    } catch (const TransportError& e) {
      out.quarantined.emplace_back(raw.id, e.what());
    }
  }
  return out;
}

}  // namespace rlvr
