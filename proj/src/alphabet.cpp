#include "rlvr/alphabet.hpp"

#include <cctype>

#include "rlvr/error.hpp"

namespace rlvr::alphabet {
namespace {

std::optional<TokenId> tokenFor(char c) {
  if (c >= '0' && c <= '9') return static_cast<TokenId>(c - '0');
  switch (c) {
    case '+': return kPlus;
    case '-': return kMinus;
    case '*': return kTimes;
    case '=': return kEquals;
    case ' ': return kSpace;
    default: return std::nullopt;
  }
}

}  // namespace

bool encodable(std::string_view text) {
  for (char c : text)
    if (!tokenFor(c)) return false;
  return true;
}

std::vector<TokenId> encode(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (char c : text) {
    auto t = tokenFor(c);
    if (!t) throw ContractViolation(std::string("character not in policy alphabet: '") + c + "'");
    out.push_back(*t);
  }
  return out;
}

std::string decode(std::span<const TokenId> tokens) {
  static constexpr char kChars[] = "0123456789+-*= ";
  std::string out;
  for (TokenId t : tokens) {
    if (t == kEnd) break;
    out.push_back(t < kEnd ? kChars[t] : '?');
  }
  return out;
}

}  // namespace rlvr::alphabet

namespace rlvr {

std::optional<std::string> extractAnswer(std::string_view text) {
  auto trimmed = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  };
  constexpr std::string_view boxed = "\\boxed{";
  if (const auto at = text.rfind(boxed); at != std::string_view::npos) {
    int depth = 0;
    for (std::size_t i = at + boxed.size() - 1; i < text.size(); ++i) {
      if (text[i] == '{') ++depth;
      if (text[i] == '}' && --depth == 0) {
        auto inner = trimmed(text.substr(at + boxed.size(), i - at - boxed.size()));
        if (inner.empty()) return std::nullopt;
        return std::string(inner);
      }
    }
  }
  const auto eq = text.rfind('=');
  if (eq == std::string_view::npos) return std::nullopt;
  auto tail = trimmed(text.substr(eq + 1));
  if (tail.empty()) return std::nullopt;
  return std::string(tail);
}

}  // namespace rlvr
