#include <gtest/gtest.h>

#include <set>

#include "grlab/rng.hpp"
#include "grlab/tasks.hpp"
#include "oracles.hpp"

namespace grlab {
namespace {

TokenSeq response(const TokenSeq& think, const TokenSeq& answer, bool stop = true) {
  TokenSeq r{tok::kThinkOpen};
  r.insert(r.end(), think.begin(), think.end());
  r.push_back(tok::kThinkClose);
  r.push_back(tok::kAnswerOpen);
  r.insert(r.end(), answer.begin(), answer.end());
  r.push_back(tok::kAnswerClose);
  if (stop) r.push_back(tok::kStop);
  return r;
}

Problem math_problem(std::int64_t answer) {
  Problem p;
  p.id = "m";
  p.kind = TaskKind::kMath;
  p.prompt = {tok::kTaskMath, tok::digit(1), tok::digit(2), tok::kPlus, tok::digit(7)};
  p.ground_truth = MathTruth{answer};
  p.subdomain = "add";
  return p;
}

TEST(GenerateTest, MathDepthOneShapeAndTruth) {
  const auto pool = generate_problems(TaskKind::kMath, 50, {}, 1);
  ASSERT_EQ(pool.size(), 50u);
  std::set<std::string> ids;
  for (const auto& p : pool) {
    ids.insert(p.id);
    EXPECT_EQ(p.kind, TaskKind::kMath);
    EXPECT_FALSE(p.subdomain.empty());
    EXPECT_TRUE(p.subdomain == "add" || p.subdomain == "mul" || p.subdomain == "mixed" ||
                p.subdomain == "mod");
    EXPECT_EQ(p.prompt.front(), tok::kTaskMath);
    int ops = 0;
    for (Token t : p.prompt) ops += (t == tok::kPlus || t == tok::kTimes || t == tok::kMod) ? 1 : 0;
    EXPECT_EQ(ops, 1);
    EXPECT_EQ(verify(p, p.reference), Verdict::kCorrect) << render(p.prompt);
    validate_problem(p);
  }
  EXPECT_EQ(ids.size(), pool.size());
}

TEST(GenerateTest, MathEvaluatesExpressionsByPrecedence) {
  DifficultyKnobs k;
  k.depth = 3;
  k.subdomains = {"mixed"};
  for (const auto& p : generate_problems(TaskKind::kMath, 200, k, 5)) {
    // Re-evaluate the prompt independently: split on +, multiply/mod inside.
    std::vector<std::int64_t> terms;
    std::int64_t cur = 0, num = 0;
    Token pending = -1;
    auto flush = [&](std::int64_t n) {
      if (pending == -1) cur = n;
      else if (pending == tok::kTimes) cur *= n;
      else cur %= n;
    };
    for (std::size_t i = 1; i <= p.prompt.size(); ++i) {
      const Token t = i < p.prompt.size() ? p.prompt[i] : tok::kPlus;
      if (tok::is_digit(t)) {
        num = num * 10 + tok::digit_value(t);
        continue;
      }
      flush(num);
      num = 0;
      if (t == tok::kPlus) {
        terms.push_back(cur);
        pending = -1;
      } else {
        pending = t;
      }
    }
    std::int64_t total = 0;
    for (auto v : terms) total += v;
    EXPECT_EQ(std::get<MathTruth>(p.ground_truth).answer, total) << render(p.prompt);
  }
}

TEST(GenerateTest, DeterministicForSeed) {
  for (TaskKind k : kAllTaskKinds) {
    EXPECT_EQ(generate_problems(k, 30, {}, 9), generate_problems(k, 30, {}, 9));
    EXPECT_NE(generate_problems(k, 30, {}, 9), generate_problems(k, 30, {}, 10));
  }
}

TEST(GenerateTest, TargetAnswerAndSubdomainKnobs) {
  DifficultyKnobs k;
  k.target_answer = 7;
  k.subdomains = {"add"};
  for (const auto& p : generate_problems(TaskKind::kMath, 40, k, 2)) {
    EXPECT_EQ(std::get<MathTruth>(p.ground_truth).answer, 7);
    EXPECT_EQ(p.subdomain, "add");
  }
  k.subdomains = {"bogus"};
  EXPECT_THROW(generate_problems(TaskKind::kMath, 1, k, 2), std::invalid_argument);
  EXPECT_THROW(generate_problems(TaskKind::kMath, 0, {}, 2), std::invalid_argument);
}

TEST(GenerateTest, CodeProblemsHaveTwoToFourTestsAndSolvableReferences) {
  DifficultyKnobs k;
  k.depth = 2;
  for (const auto& p : generate_problems(TaskKind::kCode, 100, k, 3)) {
    const auto& truth = std::get<CodeTruth>(p.ground_truth);
    EXPECT_GE(truth.tests.size(), 2u);
    EXPECT_LE(truth.tests.size(), 4u);
    EXPECT_EQ(verify(p, p.reference), Verdict::kCorrect) << render(p.prompt);
  }
}

TEST(GenerateTest, FormatReferencesSatisfyConstraints) {
  DifficultyKnobs k;
  k.num_required = 2;
  k.num_forbidden = 2;
  k.max_length = 9;
  for (const auto& p : generate_problems(TaskKind::kFormat, 100, k, 4)) {
    EXPECT_EQ(verify(p, p.reference), Verdict::kCorrect) << render(p.prompt);
  }
  k.num_required = 3;
  EXPECT_THROW(generate_problems(TaskKind::kFormat, 1, k, 4), std::invalid_argument);
}

TEST(SplitTest, StructuralGate) {
  EXPECT_TRUE(split_response(response({}, {tok::digit(1)})));
  EXPECT_TRUE(split_response(response({tok::digit(3)}, {tok::digit(1)}, false)));
  // Missing think segment.
  EXPECT_FALSE(split_response(TokenSeq{tok::kAnswerOpen, tok::digit(1), tok::kAnswerClose}));
  // Two answer segments.
  TokenSeq twice = response({}, {tok::digit(1)}, false);
  twice.push_back(tok::kAnswerOpen);
  twice.push_back(tok::kAnswerClose);
  EXPECT_FALSE(split_response(twice));
  // Trailing garbage after stop.
  TokenSeq trailing = response({}, {tok::digit(1)});
  trailing.push_back(tok::digit(2));
  EXPECT_FALSE(split_response(trailing));
  // Nested delimiter inside think.
  EXPECT_FALSE(split_response(response({tok::kAnswerOpen}, {tok::digit(1)})));
  EXPECT_FALSE(split_response(TokenSeq{}));
}

TEST(VerifyTest, MathVerdicts) {
  const Problem p = math_problem(19);
  EXPECT_EQ(verify(p, response({}, {tok::digit(1), tok::digit(9)})), Verdict::kCorrect);
  EXPECT_EQ(verify(p, response({}, {tok::digit(2), tok::digit(0)})), Verdict::kIncorrect);
  // Non-integer answer segment.
  EXPECT_EQ(verify(p, response({}, {tok::symbol(0), tok::symbol(1)})), Verdict::kUnparsable);
  EXPECT_EQ(verify(p, response({}, {})), Verdict::kUnparsable);
  EXPECT_EQ(verify(p, TokenSeq{tok::digit(1), tok::digit(9)}), Verdict::kUnparsable);
}

TEST(VerifyTest, CodeWrongOnOneOfThreeTestsIsIncorrect) {
  Problem p;
  p.id = "c";
  p.kind = TaskKind::kCode;
  p.prompt = {tok::kTaskCode};
  // f(x) = x * x except the program below computes x + x, which agrees at 0 and 2.
  p.ground_truth = CodeTruth{{{{0}, {0}}, {{2}, {4}}, {{3}, {9}}}};
  const TokenSeq add_self{tok::kOpDup, tok::kOpAdd};
  const TokenSeq mul_self{tok::kOpDup, tok::kOpMul};
  EXPECT_EQ(verify(p, response({}, mul_self)), Verdict::kCorrect);
  EXPECT_EQ(verify(p, response({}, add_self)), Verdict::kIncorrect);
  EXPECT_EQ(verify(p, response({}, {tok::kOpPush})), Verdict::kUnparsable);
  EXPECT_EQ(verify(p, response({}, {tok::kOpAdd})), Verdict::kIncorrect);  // runtime underflow
}

TEST(VerifyTest, FormatConstraints) {
  Problem p;
  p.id = "f";
  p.kind = TaskKind::kFormat;
  p.prompt = {tok::kTaskFormat};
  p.ground_truth = FormatTruth{{{ConstraintType::kLength, 3},
                                {ConstraintType::kRequire, tok::symbol(1)},
                                {ConstraintType::kForbid, tok::symbol(2)}}};
  EXPECT_EQ(verify(p, response({}, {tok::symbol(1), tok::symbol(0), tok::symbol(1)})),
            Verdict::kCorrect);
  EXPECT_EQ(verify(p, response({}, {tok::symbol(1), tok::symbol(0)})), Verdict::kIncorrect);
  EXPECT_EQ(verify(p, response({}, {tok::symbol(1), tok::symbol(2), tok::symbol(1)})),
            Verdict::kIncorrect);
  EXPECT_EQ(verify(p, response({}, {tok::symbol(0), tok::symbol(0), tok::symbol(0)})),
            Verdict::kIncorrect);
}

TEST(VerifyTest, ThinkContentIsNeverGraded) {
  const Problem p = math_problem(19);
  const TokenSeq answer{tok::digit(1), tok::digit(9)};
  EXPECT_EQ(verify(p, response({tok::digit(4), tok::kPlus, tok::symbol(3)}, answer)),
            Verdict::kCorrect);
}

TEST(RewardTest, Mapping) {
  EXPECT_EQ(reward(Verdict::kCorrect).value, 1.0);
  EXPECT_TRUE(reward(Verdict::kCorrect).grad_mask);
  EXPECT_EQ(reward(Verdict::kIncorrect).value, 0.0);
  EXPECT_TRUE(reward(Verdict::kIncorrect).grad_mask);
  EXPECT_EQ(reward(Verdict::kUnparsable).value, 0.0);
  EXPECT_FALSE(reward(Verdict::kUnparsable).grad_mask);
}

TEST(RewardTest, NoLengthDependence) {
  // Padding the think segment changes the length but never the reward.
  const Problem p = math_problem(19);
  const TokenSeq answer{tok::digit(1), tok::digit(9)};
  TokenSeq think;
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(reward(verify(p, response(think, answer))).value, 1.0);
    think.push_back(tok::digit(i % 10));
  }
}

TEST(InterpreterTest, Examples) {
  const TokenSeq add{tok::kOpPush, tok::digit(2), tok::kOpPush, tok::digit(3), tok::kOpAdd};
  const ExecResult r = interpret_program(add, {});
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.stack, (std::vector<std::int64_t>{5}));
  const TokenSeq bad{tok::kOpAdd};
  EXPECT_EQ(interpret_program(bad, {}).failure, ExecFailure::kUnderflow);
  const TokenSeq swap{tok::kOpSwap};
  const std::vector<std::int64_t> in{1, 2};
  EXPECT_EQ(interpret_program(swap, in).stack, (std::vector<std::int64_t>{2, 1}));
  const TokenSeq multi{tok::kOpPush, tok::digit(1), tok::digit(2)};
  EXPECT_EQ(interpret_program(multi, {}).stack, (std::vector<std::int64_t>{12}));
}

TEST(InterpreterTest, BudgetAndOverflow) {
  TokenSeq long_prog{tok::kOpPush, tok::digit(1)};
  for (int i = 0; i < 300; ++i) long_prog.push_back(tok::kOpDup);
  EXPECT_EQ(interpret_program(long_prog, {}).failure, ExecFailure::kBudgetExhausted);
  TokenSeq overflow{tok::kOpPush};
  for (int i = 0; i < 9; ++i) overflow.push_back(tok::digit(9));
  for (int i = 0; i < 4; ++i) {
    overflow.push_back(tok::kOpDup);
    overflow.push_back(tok::kOpMul);
  }
  EXPECT_EQ(interpret_program(overflow, {}).failure, ExecFailure::kOverflow);
  EXPECT_EQ(interpret_program(TokenSeq{tok::digit(1)}, {}).failure, ExecFailure::kMalformed);
}

TEST(InterpreterTest, MatchesReferenceInterpreterOnRandomPrograms) {
  Rng rng(2024);
  static constexpr Token kAlphabet[] = {tok::kOpPush, tok::kOpAdd, tok::kOpMul, tok::kOpDup,
                                        tok::kOpSwap, tok::digit(0), tok::digit(3), tok::digit(9),
                                        tok::kPlus};
  int agreed_ok = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    TokenSeq prog;
    const int len = rng.range(0, 16);
    for (int i = 0; i < len; ++i) {
      // Mostly well-formed: bias toward push+digits and ops.
      if (rng.below(3) == 0) {
        prog.push_back(tok::kOpPush);
        const int nd = rng.range(rng.below(20) == 0 ? 0 : 1, 3);
        for (int d = 0; d < nd; ++d) prog.push_back(tok::digit(rng.range(0, 9)));
      } else {
        prog.push_back(kAlphabet[rng.below(rng.below(30) == 0 ? 9 : 5)]);
      }
    }
    std::vector<std::int64_t> inputs;
    for (int i = rng.range(0, 3); i > 0; --i) inputs.push_back(rng.range(0, 20));
    bool malformed = false;
    const auto expect = oracle::run_stack_program(prog, inputs, kDefaultStepBudget, &malformed);
    const ExecResult got = interpret_program(prog, inputs);
    EXPECT_EQ(got.failure == ExecFailure::kMalformed, malformed) << render(prog);
    EXPECT_EQ(got.ok(), expect.has_value()) << render(prog);
    if (got.ok() && expect) {
      EXPECT_EQ(got.stack, *expect);
      ++agreed_ok;
    }
  }
  EXPECT_GT(agreed_ok, 100);
}

TEST(SerializationTest, RoundTripAllKinds) {
  for (TaskKind k : kAllTaskKinds) {
    auto pool = generate_problems(k, 10, {}, 6);
    pool[3].meta_pass_rate = 0.625;
    const std::string text = pool_to_jsonl(pool);
    EXPECT_EQ(pool_from_jsonl(text), pool);
  }
}

TEST(SerializationTest, StableFieldNamesAndErrors) {
  const auto pool = generate_problems(TaskKind::kMath, 1, {}, 6);
  const std::string line = problem_to_json(pool[0]);
  for (const char* f : {"\"id\"", "\"kind\"", "\"prompt\"", "\"ground_truth\"", "\"subdomain\"",
                        "\"meta_pass_rate\""}) {
    EXPECT_NE(line.find(f), std::string::npos) << f;
  }
  EXPECT_THROW(pool_from_jsonl(line + "\n" + line + "\n"), std::invalid_argument);  // dup id
  EXPECT_THROW(problem_from_json("{not json"), std::invalid_argument);
  EXPECT_THROW(problem_from_json(R"({"id":"a","kind":"math","prompt":[],"ground_truth":{"answer":1},"extra":1})"),
               std::invalid_argument);
  EXPECT_THROW(problem_from_json(R"({"id":"a","kind":"poetry","prompt":[],"ground_truth":{}})"),
               std::invalid_argument);
}

}  // namespace
}  // namespace grlab
