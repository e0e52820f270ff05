#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace grlab {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

// Shared vocabulary for every task family. Id 0 doubles as the stop token and
// as the implicit beginning-of-sequence input of the transformer policy.
namespace tok {
inline constexpr Token kStop = 0;
inline constexpr Token kThinkOpen = 1;
inline constexpr Token kThinkClose = 2;
inline constexpr Token kAnswerOpen = 3;
inline constexpr Token kAnswerClose = 4;
inline constexpr Token kDigit0 = 5;  // 5..14 are the digits 0..9
inline constexpr Token kPlus = 15;
inline constexpr Token kTimes = 16;
inline constexpr Token kMod = 17;
inline constexpr Token kEquals = 18;
inline constexpr Token kSemi = 19;
inline constexpr Token kTaskMath = 20;
inline constexpr Token kTaskCode = 21;
inline constexpr Token kTaskFormat = 22;
inline constexpr Token kVarX = 23;
inline constexpr Token kOpPush = 24;
inline constexpr Token kOpAdd = 25;
inline constexpr Token kOpMul = 26;
inline constexpr Token kOpDup = 27;
inline constexpr Token kOpSwap = 28;
inline constexpr Token kConstraintLength = 29;
inline constexpr Token kConstraintRequire = 30;
inline constexpr Token kConstraintForbid = 31;
inline constexpr Token kSymbolA = 32;  // 32..35 are the format symbols A..D
inline constexpr int kNumSymbols = 4;

inline constexpr int kVocabSize = 36;

constexpr Token digit(int d) { return kDigit0 + d; }
constexpr bool is_digit(Token t) { return t >= kDigit0 && t < kDigit0 + 10; }
constexpr int digit_value(Token t) { return t - kDigit0; }
constexpr Token symbol(int i) { return kSymbolA + i; }
constexpr bool is_symbol(Token t) {
  return t >= kSymbolA && t < kSymbolA + kNumSymbols;
}
constexpr bool is_delimiter(Token t) {
  return t == kStop || (t >= kThinkOpen && t <= kAnswerClose);
}
}  // namespace tok

// Decimal rendering of a nonnegative integer as digit tokens.
TokenSeq number_tokens(std::int64_t value);

// Parses a nonempty run of digit tokens; nullopt on any non-digit or overflow.
std::optional<std::int64_t> parse_number(const TokenSeq& tokens);

// Human-readable rendering, e.g. "<think> 3 + 4 </think> ...".
std::string render(const TokenSeq& tokens);

}  // namespace grlab
