#include "rlvr/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "rlvr/error.hpp"
#include "rlvr/random.hpp"

namespace rlvr {

std::optional<Rational> Rational::make(std::int64_t num, std::int64_t den) {
  constexpr auto kMin = std::numeric_limits<std::int64_t>::min();
  if (den == 0 || num == kMin || den == kMin) return std::nullopt;
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const std::int64_t g = std::gcd(num, den);
  return Rational{num / g, den / g};
}

std::optional<Rational> add(Rational a, Rational b) {
  const std::int64_t g = std::gcd(a.den, b.den);
  std::int64_t l, r, d;
  if (__builtin_mul_overflow(a.num, b.den / g, &l) || __builtin_mul_overflow(b.num, a.den / g, &r) ||
      __builtin_add_overflow(l, r, &l) || __builtin_mul_overflow(a.den / g, b.den, &d))
    return std::nullopt;
  return Rational::make(l, d);
}

std::optional<Rational> sub(Rational a, Rational b) {
  if (b.num == std::numeric_limits<std::int64_t>::min()) return std::nullopt;
  return add(a, Rational{-b.num, b.den});
}

std::optional<Rational> mul(Rational a, Rational b) {
  // Cross-reduce first to delay overflow.
  const std::int64_t g1 = std::gcd(a.num, b.den), g2 = std::gcd(b.num, a.den);
  const std::int64_t an = g1 ? a.num / g1 : a.num, bd = g1 ? b.den / g1 : b.den;
  const std::int64_t bn = g2 ? b.num / g2 : b.num, ad = g2 ? a.den / g2 : a.den;
  std::int64_t n, d;
  if (__builtin_mul_overflow(an, bn, &n) || __builtin_mul_overflow(ad, bd, &d)) return std::nullopt;
  return Rational::make(n, d);
}

std::optional<Rational> div(Rational a, Rational b) {
  if (b.num == 0) return std::nullopt;
  auto inv = Rational::make(b.den, b.num);
  if (!inv) return std::nullopt;
  return mul(a, *inv);
}

ExprNode ExprNode::integer(std::int64_t v) {
  ExprNode n;
  n.kind = ExprKind::Integer;
  n.value = Rational{v, 1};
  return n;
}

ExprNode ExprNode::rational(Rational r) {
  ExprNode n;
  n.kind = ExprKind::Rational;
  n.value = r;
  return n;
}

ExprNode ExprNode::realNumber(double v) {
  ExprNode n;
  n.kind = ExprKind::Real;
  n.real = v;
  return n;
}

ExprNode ExprNode::variable(char c) {
  ExprNode n;
  n.kind = ExprKind::Symbol;
  n.symbol = c;
  return n;
}

ExprNode ExprNode::constant(ExprKind k) {
  ExprNode n;
  n.kind = k;
  return n;
}

ExprNode ExprNode::unary(ExprKind k, ExprNode child) {
  ExprNode n;
  n.kind = k;
  n.children.push_back(std::move(child));
  return n;
}

ExprNode ExprNode::binary(ExprKind k, ExprNode lhs, ExprNode rhs) {
  ExprNode n;
  n.kind = k;
  n.children.push_back(std::move(lhs));
  n.children.push_back(std::move(rhs));
  return n;
}

namespace {

bool isAlpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool isDigit(char c) { return c >= '0' && c <= '9'; }

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  ExprNode parseAll() {
    if (s_.size() > kMaxLength) fail("expression longer than " + std::to_string(kMaxLength) + " characters");
    skipSpace();
    if (pos_ >= s_.size()) fail("empty expression");
    ExprNode e = parseExpr();
    skipSpace();
    if (pos_ < s_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(pos_, what); }

  void skipSpace() {
    for (;;) {
      while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      if (pos_ + 1 < s_.size() && s_[pos_] == '\\' &&
          (s_[pos_ + 1] == ',' || s_[pos_ + 1] == ';' || s_[pos_ + 1] == ':' || s_[pos_ + 1] == '!' ||
           s_[pos_ + 1] == ' ')) {
        pos_ += 2;
        continue;
      }
      const auto cmd = commandAt(pos_);
      if (cmd == "quad" || cmd == "qquad") {
        pos_ += 1 + cmd.size();
        continue;
      }
      return;
    }
  }

  // Letters following a backslash at `at`, or empty.
  std::string_view commandAt(std::size_t at) const {
    if (at >= s_.size() || s_[at] != '\\') return {};
    std::size_t end = at + 1;
    while (end < s_.size() && isAlpha(s_[end])) ++end;
    return s_.substr(at + 1, end - at - 1);
  }

  bool accept(char c) {
    skipSpace();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  bool acceptCommand(std::string_view name) {
    skipSpace();
    if (commandAt(pos_) == name) {
      pos_ += 1 + name.size();
      return true;
    }
    return false;
  }

  bool startsPrimary() {
    skipSpace();
    if (pos_ >= s_.size()) return false;
    const char c = s_[pos_];
    if (isDigit(c) || isAlpha(c) || c == '(' || c == '{') return true;
    if (c == '.') return pos_ + 1 < s_.size() && isDigit(s_[pos_ + 1]);
    const auto cmd = commandAt(pos_);
    return cmd == "pi" || cmd == "frac" || cmd == "dfrac" || cmd == "tfrac" || cmd == "sqrt" ||
           cmd == "left";
  }

  ExprNode parseExpr() {
    ExprNode lhs = parseTerm();
    for (;;) {
      if (accept('+')) {
        lhs = ExprNode::binary(ExprKind::Add, std::move(lhs), parseTerm());
      } else if (accept('-')) {
        lhs = ExprNode::binary(ExprKind::Sub, std::move(lhs), parseTerm());
      } else {
        return lhs;
      }
    }
  }

  ExprNode parseTerm() {
    ExprNode lhs = parseUnary();
    for (;;) {
      if (accept('*') || acceptCommand("cdot") || acceptCommand("times")) {
        lhs = ExprNode::binary(ExprKind::Mul, std::move(lhs), parseUnary());
      } else if (accept('/') || acceptCommand("div")) {
        lhs = ExprNode::binary(ExprKind::Div, std::move(lhs), parseUnary());
      } else if (startsPrimary()) {
        lhs = ExprNode::binary(ExprKind::Mul, std::move(lhs), parsePower());
      } else {
        return lhs;
      }
    }
  }

  // Bounds recursion so hostile input cannot exhaust the stack.
  struct DepthGuard {
    explicit DepthGuard(Parser& p) : p_(p) {
      if (++p_.depth_ > kMaxDepth) p_.fail("expression nested too deeply");
    }
    ~DepthGuard() { --p_.depth_; }
    Parser& p_;
  };

  ExprNode parseUnary() {
    DepthGuard guard(*this);
    if (accept('-')) return ExprNode::unary(ExprKind::Neg, parseUnary());
    if (accept('+')) return parseUnary();
    return parsePower();
  }

  ExprNode parsePower() {
    ExprNode base = parsePrimary();
    if (accept('^')) return ExprNode::binary(ExprKind::Pow, std::move(base), parseUnary());
    return base;
  }

  ExprNode parseBraced() {
    expect('{');
    ExprNode inner = parseExpr();
    expect('}');
    return inner;
  }

  ExprNode parseNumber() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && isDigit(s_[pos_])) ++pos_;
    const std::size_t intEnd = pos_;
    std::size_t fracDigits = 0;
    if (pos_ + 1 < s_.size() && s_[pos_] == '.' && isDigit(s_[pos_ + 1])) {
      ++pos_;
      while (pos_ < s_.size() && isDigit(s_[pos_])) {
        ++pos_;
        ++fracDigits;
      }
    }
    const std::string_view lit = s_.substr(start, pos_ - start);
    if (lit.empty()) fail("expected number");
    std::string digits(s_.substr(start, intEnd - start));
    if (fracDigits > 0) digits += std::string(s_.substr(intEnd + 1, fracDigits));
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec == std::errc() && ptr == digits.data() + digits.size() && fracDigits <= 18) {
      if (fracDigits == 0) return ExprNode::integer(value);
      std::int64_t den = 1;
      for (std::size_t i = 0; i < fracDigits; ++i) den *= 10;
      if (auto r = Rational::make(value, den)) return ExprNode::rational(*r);
    }
    double real = 0.0;
    std::from_chars(lit.data(), lit.data() + lit.size(), real);
    return ExprNode::realNumber(real);
  }

  ExprNode parsePrimary() {
    DepthGuard guard(*this);
    skipSpace();
    if (pos_ >= s_.size()) fail("unexpected end of input");
    const char c = s_[pos_];
    if (isDigit(c) || c == '.') return parseNumber();
    if (isAlpha(c)) {
      ++pos_;
      if (c == 'e') return ExprNode::constant(ExprKind::E);
      return ExprNode::variable(c);
    }
    if (c == '(') {
      ++pos_;
      ExprNode inner = parseExpr();
      expect(')');
      return ExprNode::unary(ExprKind::Group, std::move(inner));
    }
    if (c == '{') return parseBraced();
    if (c == '\\') {
      const std::string name(commandAt(pos_));
      if (name.empty()) fail("stray backslash");
      pos_ += 1 + name.size();
      if (name == "pi") return ExprNode::constant(ExprKind::Pi);
      if (name == "frac" || name == "dfrac" || name == "tfrac") {
        ExprNode num = parseBraced();
        ExprNode den = parseBraced();
        return ExprNode::binary(ExprKind::Div, std::move(num), std::move(den));
      }
      if (name == "sqrt") return ExprNode::unary(ExprKind::Sqrt, parseBraced());
      if (name == "left") {
        expect('(');
        ExprNode inner = parseExpr();
        if (!acceptCommand("right")) fail("expected \\right");
        expect(')');
        return ExprNode::unary(ExprKind::Group, std::move(inner));
      }
      fail("unsupported command \\" + name);
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  static constexpr std::size_t kMaxLength = 4096;
  static constexpr std::size_t kMaxDepth = 256;

  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t depth_ = 0;
};

const char* kindName(ExprKind k) {
  switch (k) {
    case ExprKind::Integer: return "Int";
    case ExprKind::Rational: return "Rat";
    case ExprKind::Real: return "Real";
    case ExprKind::Symbol: return "Sym";
    case ExprKind::Pi: return "Pi";
    case ExprKind::E: return "E";
    case ExprKind::Add: return "Add";
    case ExprKind::Sub: return "Sub";
    case ExprKind::Mul: return "Mul";
    case ExprKind::Div: return "Div";
    case ExprKind::Pow: return "Pow";
    case ExprKind::Neg: return "Neg";
    case ExprKind::Sqrt: return "Sqrt";
    case ExprKind::Group: return "Group";
  }
  return "?";
}

std::optional<std::int64_t> exactSqrt(std::int64_t v) {
  if (v < 0) return std::nullopt;
  auto r = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(v))));
  for (std::int64_t c = std::max<std::int64_t>(0, r - 2); c <= r + 2; ++c) {
    std::int64_t sq;
    if (!__builtin_mul_overflow(c, c, &sq) && sq == v) return c;
  }
  return std::nullopt;
}

bool close(double a, double b) {
  if (a == b) return true;
  return std::fabs(a - b) <= kEquivalenceRelTol * std::max(std::fabs(a), std::fabs(b));
}

}  // namespace

ExprNode parseLatexSubset(std::string_view text) { return Parser(text).parseAll(); }

std::string describe(const ExprNode& n) {
  switch (n.kind) {
    case ExprKind::Integer: return std::to_string(n.value.num);
    case ExprKind::Rational: return std::to_string(n.value.num) + "/" + std::to_string(n.value.den);
    case ExprKind::Real: {
      char buf[64];
      const auto res = std::to_chars(buf, buf + sizeof(buf), n.real);
      return std::string(buf, res.ptr);
    }
    case ExprKind::Symbol: return std::string(1, n.symbol);
    case ExprKind::Pi: return "Pi";
    case ExprKind::E: return "E";
    default: break;
  }
  std::string out = kindName(n.kind);
  out += '(';
  for (std::size_t i = 0; i < n.children.size(); ++i) {
    if (i) out += ", ";
    out += describe(n.children[i]);
  }
  out += ')';
  return out;
}

std::set<char> symbolsOf(const ExprNode& node) {
  std::set<char> out;
  if (node.kind == ExprKind::Symbol) out.insert(node.symbol);
  for (const auto& c : node.children) {
    auto sub = symbolsOf(c);
    out.insert(sub.begin(), sub.end());
  }
  return out;
}

std::optional<Rational> evaluateExact(const ExprNode& n) {
  switch (n.kind) {
    case ExprKind::Integer:
    case ExprKind::Rational: return n.value;
    case ExprKind::Real:
    case ExprKind::Symbol:
    case ExprKind::Pi:
    case ExprKind::E: return std::nullopt;
    case ExprKind::Group: return evaluateExact(n.children[0]);
    case ExprKind::Neg: {
      auto v = evaluateExact(n.children[0]);
      if (!v) return std::nullopt;
      return Rational::make(-v->num, v->den);
    }
    case ExprKind::Sqrt: {
      auto v = evaluateExact(n.children[0]);
      if (!v) return std::nullopt;
      auto rn = exactSqrt(v->num), rd = exactSqrt(v->den);
      if (!rn || !rd) return std::nullopt;
      return Rational::make(*rn, *rd);
    }
    default: break;
  }
  auto a = evaluateExact(n.children[0]);
  auto b = evaluateExact(n.children[1]);
  if (!a || !b) return std::nullopt;
  switch (n.kind) {
    case ExprKind::Add: return add(*a, *b);
    case ExprKind::Sub: return sub(*a, *b);
    case ExprKind::Mul: return mul(*a, *b);
    case ExprKind::Div: return div(*a, *b);
    case ExprKind::Pow: {
      if (b->den != 1 || b->num > 64 || b->num < -64) return std::nullopt;
      Rational acc{1, 1};
      for (std::int64_t i = 0; i < (b->num < 0 ? -b->num : b->num); ++i) {
        auto next = mul(acc, *a);
        if (!next) return std::nullopt;
        acc = *next;
      }
      if (b->num < 0) return div(Rational{1, 1}, acc);
      return acc;
    }
    default: return std::nullopt;
  }
}

std::optional<double> evaluate(const ExprNode& n, const std::map<char, double>& vars) {
  auto finite = [](double v) -> std::optional<double> {
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  };
  switch (n.kind) {
    case ExprKind::Integer:
    case ExprKind::Rational: return n.value.toDouble();
    case ExprKind::Real: return finite(n.real);
    case ExprKind::Pi: return M_PI;
    case ExprKind::E: return M_E;
    case ExprKind::Symbol: {
      auto it = vars.find(n.symbol);
      if (it == vars.end()) return std::nullopt;
      return it->second;
    }
    case ExprKind::Group: return evaluate(n.children[0], vars);
    case ExprKind::Neg: {
      auto v = evaluate(n.children[0], vars);
      if (!v) return std::nullopt;
      return -*v;
    }
    case ExprKind::Sqrt: {
      auto v = evaluate(n.children[0], vars);
      if (!v || *v < 0.0) return std::nullopt;
      return std::sqrt(*v);
    }
    default: break;
  }
  auto a = evaluate(n.children[0], vars);
  auto b = evaluate(n.children[1], vars);
  if (!a || !b) return std::nullopt;
  switch (n.kind) {
    case ExprKind::Add: return finite(*a + *b);
    case ExprKind::Sub: return finite(*a - *b);
    case ExprKind::Mul: return finite(*a * *b);
    case ExprKind::Div:
      if (*b == 0.0) return std::nullopt;
      return finite(*a / *b);
    case ExprKind::Pow:
      if (*a < 0.0 && std::floor(*b) != *b) return std::nullopt;
      if (*a == 0.0 && *b < 0.0) return std::nullopt;
      return finite(std::pow(*a, *b));
    default: return std::nullopt;
  }
}

bool symbolicEquivalent(const ExprNode& a, const ExprNode& b) {
  std::set<char> syms = symbolsOf(a);
  const auto sb = symbolsOf(b);
  syms.insert(sb.begin(), sb.end());
  if (syms.empty()) {
    auto ea = evaluateExact(a), eb = evaluateExact(b);
    if (ea && eb) return *ea == *eb;
    auto va = evaluate(a), vb = evaluate(b);
    return va && vb && close(*va, *vb);
  }
  Rng rng(0x5EED0F5A3B1C2D4EULL);
  int valid = 0;
  std::map<char, double> vars;
  for (int point = 0; point < kEquivalenceSamplePoints; ++point) {
    for (char s : syms) {
      const double mag = rng.uniform(0.5, 2.0);
      vars[s] = rng.uniform() < 0.5 ? -mag : mag;
    }
    auto va = evaluate(a, vars), vb = evaluate(b, vars);
    if (!va || !vb) continue;
    if (!close(*va, *vb)) return false;
    ++valid;
  }
  return valid >= kEquivalenceMinValidPoints;
}

}  // namespace rlvr
