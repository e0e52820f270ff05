#pragma once

#include <string_view>

namespace grlab {

enum class Verdict { kCorrect, kIncorrect, kUnparsable };

constexpr std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kCorrect:
      return "correct";
    case Verdict::kIncorrect:
      return "incorrect";
    case Verdict::kUnparsable:
      return "unparsable";
  }
  return "?";
}

}  // namespace grlab
