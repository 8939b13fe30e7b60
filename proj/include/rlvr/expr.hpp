#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace rlvr {

// Exact rational with int64 parts; operations report overflow as nullopt.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;  // always > 0, gcd(num, den) == 1

  static std::optional<Rational> make(std::int64_t num, std::int64_t den);
  double toDouble() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
};

std::optional<Rational> add(Rational a, Rational b);
std::optional<Rational> sub(Rational a, Rational b);
std::optional<Rational> mul(Rational a, Rational b);
std::optional<Rational> div(Rational a, Rational b);

enum class ExprKind {
  Integer,
  Rational,  // exact decimal literal, e.g. "0.5" -> 1/2
  Real,      // decimal literal too long for an exact int64 rational
  Symbol,
  Pi,
  E,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Neg,
  Sqrt,
  Group,  // explicit parentheses
};

struct ExprNode {
  ExprKind kind = ExprKind::Integer;
  std::vector<ExprNode> children;
  Rational value;     // Integer, Rational
  double real = 0.0;  // Real
  char symbol = 0;    // Symbol

  static ExprNode integer(std::int64_t v);
  static ExprNode rational(Rational r);
  static ExprNode realNumber(double v);
  static ExprNode variable(char c);
  static ExprNode constant(ExprKind k);
  static ExprNode unary(ExprKind k, ExprNode child);
  static ExprNode binary(ExprKind k, ExprNode lhs, ExprNode rhs);

  bool operator==(const ExprNode&) const = default;
};

// Grammar (whitespace and \, \; \: \! \quad spacing ignored):
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '\cdot' | '\times' | '/' | '\div') unary | power)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?                       right-associative
//   primary := number | letter | '\pi' | 'e' | '(' expr ')' | '{' expr '}'
//            | '\left(' expr '\right)' | '\frac{' expr '}{' expr '}' | '\sqrt{' expr '}'
// Juxtaposition (the `power` alternative of `term`) is multiplication, so
// "2x" is Mul(2, x) and "-3^2" is Neg(Pow(3, 2)). 'e' is Euler's number.
// Throws ParseError with the byte offset of the failure.
ExprNode parseLatexSubset(std::string_view text);

// S-expression rendering for diagnostics, e.g. "Div(1, 2)".
std::string describe(const ExprNode& node);

std::set<char> symbolsOf(const ExprNode& node);

// nullopt when the value is irrational, symbolic, or overflows int64.
std::optional<Rational> evaluateExact(const ExprNode& node);

// nullopt on a domain error: division by zero, even root or fractional
// power of a negative number, or a non-finite result.
std::optional<double> evaluate(const ExprNode& node, const std::map<char, double>& vars = {});

// Constants: exact rational comparison when both sides are rational, else
// numeric with 1e-9 relative tolerance. With symbols: 8 seeded assignments
// from [-2,-0.5] U [0.5,2]; points where either side hits a domain error are
// skipped; every remaining point must agree and at least 4 must remain.
bool symbolicEquivalent(const ExprNode& a, const ExprNode& b);

inline constexpr double kEquivalenceRelTol = 1e-9;
inline constexpr int kEquivalenceSamplePoints = 8;
inline constexpr int kEquivalenceMinValidPoints = 4;

}  // namespace rlvr
