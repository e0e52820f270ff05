#include "grlab/vocab.hpp"

#include <array>
#include <stdexcept>
#include <string_view>

namespace grlab {

TokenSeq number_tokens(std::int64_t value) {
  if (value < 0) {
    throw std::invalid_argument("number_tokens: negative value");
  }
  TokenSeq out;
  do {
    out.push_back(tok::digit(static_cast<int>(value % 10)));
    value /= 10;
  } while (value > 0);
  return {out.rbegin(), out.rend()};
}

std::optional<std::int64_t> parse_number(const TokenSeq& tokens) {
  if (tokens.empty() || tokens.size() > 18) {
    return std::nullopt;
  }
  std::int64_t value = 0;
  for (Token t : tokens) {
    if (!tok::is_digit(t)) {
      return std::nullopt;
    }
    value = value * 10 + tok::digit_value(t);
  }
  return value;
}

std::string render(const TokenSeq& tokens) {
  static constexpr std::array<std::string_view, tok::kVocabSize> kNames = {
      "<stop>", "<think>", "</think>", "<answer>", "</answer>",
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
      "+", "*", "%", "=", ";",
      "[math]", "[code]", "[format]", "x",
      "push", "add", "mul", "dup", "swap",
      "len", "require", "forbid",
      "A", "B", "C", "D"};
  std::string out;
  for (Token t : tokens) {
    if (!out.empty()) {
      out += ' ';
    }
    if (t >= 0 && t < tok::kVocabSize) {
      out += kNames[static_cast<std::size_t>(t)];
    } else {
      out += "#" + std::to_string(t);
    }
  }
  return out;
}

}  // namespace grlab
