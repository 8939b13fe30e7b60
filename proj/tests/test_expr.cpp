#include <cmath>

#include <gtest/gtest.h>

#include "rlvr/error.hpp"
#include "rlvr/expr.hpp"

namespace rlvr {
namespace {

std::string tree(std::string_view s) { return describe(parseLatexSubset(s)); }

bool equiv(std::string_view a, std::string_view b) {
  return symbolicEquivalent(parseLatexSubset(a), parseLatexSubset(b));
}

TEST(Parse, Examples) {
  EXPECT_EQ(parseLatexSubset("\\frac{1}{2}"),
            ExprNode::binary(ExprKind::Div, ExprNode::integer(1), ExprNode::integer(2)));
  EXPECT_EQ(parseLatexSubset("2x"), ExprNode::binary(ExprKind::Mul, ExprNode::integer(2), ExprNode::variable('x')));
  EXPECT_EQ(parseLatexSubset("-3^2"),
            ExprNode::unary(ExprKind::Neg, ExprNode::binary(ExprKind::Pow, ExprNode::integer(3), ExprNode::integer(2))));
}

TEST(Parse, MinusThreeSquaredIsMinusNine) {
  EXPECT_EQ(evaluate(parseLatexSubset("-3^2")), -9.0);
  EXPECT_EQ(evaluate(parseLatexSubset("(-3)^2")), 9.0);
  EXPECT_EQ(evaluateExact(parseLatexSubset("-3^2")), Rational::make(-9, 1));
}

TEST(Parse, PrecedenceAndAssociativity) {
  EXPECT_EQ(*evaluate(parseLatexSubset("2^3^2")), 512.0);
  EXPECT_EQ(*evaluate(parseLatexSubset("2+3*4")), 14.0);
  EXPECT_EQ(*evaluate(parseLatexSubset("8/4/2")), 1.0);
  EXPECT_EQ(*evaluate(parseLatexSubset("10-4-3")), 3.0);
  EXPECT_EQ(*evaluate(parseLatexSubset("2^-1")), 0.5);
  EXPECT_EQ(*evaluate(parseLatexSubset("6\\div 3\\times 2")), 4.0);
  // Juxtaposition binds like '*', left to right.
  EXPECT_EQ(*evaluate(parseLatexSubset("6/2x"), {{'x', 3.0}}), 9.0);
  EXPECT_EQ(*evaluate(parseLatexSubset("2\\sqrt{9}")), 6.0);
}

TEST(Parse, DecimalsAreExactRationals) {
  EXPECT_EQ(evaluateExact(parseLatexSubset("0.5")), Rational::make(1, 2));
  EXPECT_EQ(evaluateExact(parseLatexSubset("12.50")), Rational::make(25, 2));
  EXPECT_EQ(parseLatexSubset("0.123456789012345678901234").kind, ExprKind::Real);
}

TEST(Parse, ConstantsAndGrouping) {
  EXPECT_NEAR(*evaluate(parseLatexSubset("\\pi")), M_PI, 1e-15);
  EXPECT_NEAR(*evaluate(parseLatexSubset("e")), M_E, 1e-15);
  EXPECT_EQ(parseLatexSubset("(x)").kind, ExprKind::Group);
  EXPECT_EQ(*evaluate(parseLatexSubset("\\left(1+2\\right)\\cdot 3")), 9.0);
  EXPECT_EQ(*evaluate(parseLatexSubset("{1+2}3")), 9.0);
  EXPECT_EQ(*evaluate(parseLatexSubset("\\frac{1}{2} \\, + \\; \\frac{1}{2}")), 1.0);
}

TEST(Parse, ErrorsCarryPosition) {
  for (const char* bad : {"", "1+", "\\frac{1}", "(1+2", "1)", "\\foo{1}", "2^", "x y z +", "\\sqrt{}", "#"}) {
    EXPECT_THROW(parseLatexSubset(bad), ParseError) << bad;
  }
  try {
    parseLatexSubset("1+#");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 2u);
  }
}

TEST(Evaluate, DomainErrors) {
  EXPECT_FALSE(evaluate(parseLatexSubset("1/0")));
  EXPECT_FALSE(evaluate(parseLatexSubset("\\sqrt{-4}")));
  EXPECT_FALSE(evaluate(parseLatexSubset("(-8)^{0.5}")));
  EXPECT_FALSE(evaluateExact(parseLatexSubset("\\sqrt{2}")));
  EXPECT_EQ(evaluateExact(parseLatexSubset("\\sqrt{\\frac{9}{4}}")), Rational::make(3, 2));
  EXPECT_FALSE(evaluateExact(parseLatexSubset("x+1")));
}

TEST(Rational, Arithmetic) {
  const Rational half = *Rational::make(1, 2), third = *Rational::make(-2, -6);
  EXPECT_EQ(third, *Rational::make(1, 3));
  EXPECT_EQ(*add(half, third), *Rational::make(5, 6));
  EXPECT_EQ(*sub(half, third), *Rational::make(1, 6));
  EXPECT_EQ(*mul(half, third), *Rational::make(1, 6));
  EXPECT_EQ(*div(half, third), *Rational::make(3, 2));
  EXPECT_FALSE(Rational::make(1, 0));
  EXPECT_FALSE(div(half, Rational{}));
  EXPECT_FALSE(mul(*Rational::make(INT64_MAX, 1), *Rational::make(2, 1)));
}

TEST(Equivalent, Examples) {
  EXPECT_TRUE(equiv("0.5", "\\frac{1}{2}"));
  EXPECT_FALSE(equiv("x", "y"));
  EXPECT_TRUE(equiv("(x+1)^2", "x^2+2x+1"));
}

TEST(Equivalent, ExpansionIdentities) {
  EXPECT_TRUE(equiv("(a+b)^3", "a^3+3a^2b+3ab^2+b^3"));
  EXPECT_TRUE(equiv("(x-y)(x+y)", "x^2-y^2"));
  EXPECT_TRUE(equiv("\\frac{1}{x}+\\frac{1}{y}", "\\frac{x+y}{xy}"));
  EXPECT_FALSE(equiv("(x+1)^2", "x^2+1"));
  EXPECT_FALSE(equiv("\\frac{1}{3}", "0.333333333333"));
}

TEST(Equivalent, TooFewValidPointsIsFalse) {
  // Undefined at every sample point.
  EXPECT_FALSE(equiv("\\sqrt{-x^2-1}", "\\sqrt{-x^2-1}"));
}

TEST(Equivalent, Symmetric) {
  const std::vector<std::string> exprs{"x", "2x", "x+x", "\\frac{1}{2}", "0.5", "\\sqrt{x^2}", "x^2", "(x+1)^2",
                                       "x^2+2x+1", "\\pi", "3.14159", "e^x", "\\sqrt{8}", "2\\sqrt{2}", "y"};
  for (const auto& a : exprs)
    for (const auto& b : exprs) EXPECT_EQ(equiv(a, b), equiv(b, a)) << a << " vs " << b;
}

TEST(Parse, HostileInputIsRejectedNotCrashed) {
  EXPECT_THROW(parseLatexSubset(std::string(100000, '(') + "1"), ParseError);
  EXPECT_THROW(parseLatexSubset(std::string(300, '-') + "1"), ParseError);
  EXPECT_THROW(parseLatexSubset(std::string(5000, '1')), ParseError);
  EXPECT_NO_THROW(parseLatexSubset(std::string(100, '(') + "1" + std::string(100, ')')));
}

}  // namespace
}  // namespace rlvr
