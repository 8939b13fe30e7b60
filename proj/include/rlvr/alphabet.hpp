#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rlvr/policy.hpp"

namespace rlvr::alphabet {

// 16-symbol policy alphabet: '0'-'9' -> 0-9, '+' 10, '-' 11, '*' 12,
// '=' 13, ' ' 14, end-of-sequence 15.
inline constexpr std::size_t kVocabSize = 16;
inline constexpr TokenId kPlus = 10;
inline constexpr TokenId kMinus = 11;
inline constexpr TokenId kTimes = 12;
inline constexpr TokenId kEquals = 13;
inline constexpr TokenId kSpace = 14;
inline constexpr TokenId kEnd = 15;

bool encodable(std::string_view text);
// Throws ContractViolation on a character outside the alphabet.
std::vector<TokenId> encode(std::string_view text);
// Stops at the end token; ids >= kVocabSize render as '?'.
std::string decode(std::span<const TokenId> tokens);

}  // namespace rlvr::alphabet

namespace rlvr {

// Final answer in model output: the content of the last \boxed{...} if any,
// else the trimmed text after the final '='. nullopt when neither yields a
// non-empty span.
std::optional<std::string> extractAnswer(std::string_view text);

}  // namespace rlvr
