#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "grlab/verdict.hpp"
#include "grlab/vocab.hpp"

namespace grlab {

enum class TaskKind { kMath, kCode, kFormat };

inline constexpr std::array<TaskKind, 3> kAllTaskKinds = {
    TaskKind::kMath, TaskKind::kCode, TaskKind::kFormat};

std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view name);
inline std::size_t index_of(TaskKind kind) { return static_cast<std::size_t>(kind); }

struct MathTruth {
  std::int64_t answer = 0;
  bool operator==(const MathTruth&) const = default;
};

struct CodeTest {
  std::vector<std::int64_t> input;
  std::vector<std::int64_t> output;
  bool operator==(const CodeTest&) const = default;
};

struct CodeTruth {
  std::vector<CodeTest> tests;
  bool operator==(const CodeTruth&) const = default;
};

enum class ConstraintType { kLength, kRequire, kForbid };

struct FormatConstraint {
  ConstraintType type = ConstraintType::kLength;
  std::int64_t value = 0;  // length for kLength, token id otherwise
  bool operator==(const FormatConstraint&) const = default;
};

struct FormatTruth {
  std::vector<FormatConstraint> constraints;
  bool operator==(const FormatTruth&) const = default;
};

using GroundTruth = std::variant<MathTruth, CodeTruth, FormatTruth>;

struct Problem {
  std::string id;
  TaskKind kind = TaskKind::kMath;
  TokenSeq prompt;
  GroundTruth ground_truth;
  std::string subdomain;
  std::optional<double> meta_pass_rate;
  // A response the generator guarantees verifies Correct.
  TokenSeq reference;

  bool operator==(const Problem&) const = default;
};

// Throws std::invalid_argument when ground_truth does not match kind or is
// malformed.
void validate_problem(const Problem& problem);

struct DifficultyKnobs {
  // Math: number of binary operators. Code: number of chained steps.
  int depth = 1;
  int max_operand = 9;
  // Math only: restrict generated expressions to this value.
  std::optional<std::int64_t> target_answer;
  // Math only: subset of {add, mul, mixed, mod}; empty means all four.
  std::vector<std::string> subdomains;
  // Math only: reference think-segment carries the reduction steps.
  bool with_reasoning = true;
  // Format: exact-length range and constraint counts (required+forbidden <= 4).
  int min_length = 1;
  int max_length = 6;
  int num_required = 1;
  int num_forbidden = 1;
  // Code: test-case count range.
  int min_tests = 2;
  int max_tests = 4;
};

// Math prompts: [math] e.g. "12 + 7", evaluated with * and % binding tighter
// than +, left to right.
// Code prompts: [code] x (op operand)+, applied left to right to the single
// input, where op is + or * and the operand is a constant or x (first step
// only). Programs answer with the stack language below.
// Format prompts: [format] len N (require S)* (forbid S)*.
std::vector<Problem> generate_problems(TaskKind kind, int count,
                                       const DifficultyKnobs& knobs,
                                       std::uint64_t seed);

struct ResponseSegments {
  std::span<const Token> think;
  std::span<const Token> answer;
};

// Structural gate: <think> .. </think> <answer> .. </answer> [<stop>], with no
// delimiter or stop token inside either segment and nothing else around them.
std::optional<ResponseSegments> split_response(std::span<const Token> response);

Verdict verify(const Problem& problem, std::span<const Token> response);

struct Reward {
  double value = 0.0;
  bool grad_mask = false;
};

// Correct -> (1, true), Incorrect -> (0, true), Unparsable -> (0, false).
Reward reward(Verdict verdict);

enum class ExecFailure { kNone, kMalformed, kUnderflow, kBudgetExhausted, kOverflow };

struct ExecResult {
  std::vector<std::int64_t> stack;
  ExecFailure failure = ExecFailure::kNone;
  bool ok() const { return failure == ExecFailure::kNone; }
};

inline constexpr int kDefaultStepBudget = 256;

// Stack machine: push <digits>, add, mul, dup, swap. Inputs are pushed in
// order before execution; the result is the final stack.
ExecResult interpret_program(std::span<const Token> program,
                             std::span<const std::int64_t> inputs,
                             int step_budget = kDefaultStepBudget);

// JSON Lines with fields id, kind, prompt, ground_truth, subdomain,
// meta_pass_rate, reference.
std::string problem_to_json(const Problem& problem);
Problem problem_from_json(std::string_view line);
std::string pool_to_jsonl(std::span<const Problem> pool);
std::vector<Problem> pool_from_jsonl(std::string_view text);

}  // namespace grlab
