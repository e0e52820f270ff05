#include "grlab/tasks.hpp"

#include <algorithm>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>
#include <stdexcept>

#include "grlab/rng.hpp"

namespace grlab {

using nlohmann::json;

namespace {

constexpr std::int64_t kMaxValue = 1'000'000'000;
constexpr int kMaxAttempts = 200'000;

const std::vector<std::string> kMathSubdomains = {"add", "mul", "mixed", "mod"};

int precedence(Token op) { return op == tok::kPlus ? 1 : 2; }

std::optional<std::int64_t> apply(Token op, std::int64_t a, std::int64_t b) {
  std::int64_t r = 0;
  switch (op) {
    case tok::kPlus:
      if (__builtin_add_overflow(a, b, &r)) {
        return std::nullopt;
      }
      return r;
    case tok::kTimes:
      if (__builtin_mul_overflow(a, b, &r)) {
        return std::nullopt;
      }
      return r;
    case tok::kMod:
      if (b == 0) {
        return std::nullopt;
      }
      return a % b;
    default:
      return std::nullopt;
  }
}

// Reduces an operator chain respecting precedence. Each step appends
// "a op b = c ;" to trace when given.
std::optional<std::int64_t> reduce(std::vector<std::int64_t> nums,
                                   std::vector<Token> ops, TokenSeq* trace) {
  while (!ops.empty()) {
    std::size_t i = 0;
    for (std::size_t j = 0; j < ops.size(); ++j) {
      if (precedence(ops[j]) == 2) {
        i = j;
        break;
      }
    }
    auto v = apply(ops[i], nums[i], nums[i + 1]);
    if (!v || *v > kMaxValue) {
      return std::nullopt;
    }
    if (trace != nullptr) {
      auto append = [trace](const TokenSeq& s) {
        trace->insert(trace->end(), s.begin(), s.end());
      };
      append(number_tokens(nums[i]));
      trace->push_back(ops[i]);
      append(number_tokens(nums[i + 1]));
      trace->push_back(tok::kEquals);
      append(number_tokens(*v));
      trace->push_back(tok::kSemi);
    }
    nums[i] = *v;
    nums.erase(nums.begin() + static_cast<std::ptrdiff_t>(i) + 1);
    ops.erase(ops.begin() + static_cast<std::ptrdiff_t>(i));
  }
  return nums.front();
}

TokenSeq wrap_response(const TokenSeq& think, const TokenSeq& answer) {
  TokenSeq r{tok::kThinkOpen};
  r.insert(r.end(), think.begin(), think.end());
  r.push_back(tok::kThinkClose);
  r.push_back(tok::kAnswerOpen);
  r.insert(r.end(), answer.begin(), answer.end());
  r.push_back(tok::kAnswerClose);
  r.push_back(tok::kStop);
  return r;
}

std::string make_id(TaskKind kind, std::uint64_t seed, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%08llx-%05d",
                std::string(to_string(kind)).c_str(),
                static_cast<unsigned long long>(mix64(seed) & 0xFFFFFFFFULL),
                index);
  return buf;
}

Problem generate_math(const DifficultyKnobs& knobs, Rng& rng) {
  const auto& allowed = knobs.subdomains.empty() ? kMathSubdomains : knobs.subdomains;
  for (const auto& s : allowed) {
    if (std::find(kMathSubdomains.begin(), kMathSubdomains.end(), s) ==
        kMathSubdomains.end()) {
      throw std::invalid_argument("unknown math subdomain '" + s + "'");
    }
  }
  const int max_operand = std::max(knobs.max_operand, 1);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const std::string& sub = allowed[rng.below(allowed.size())];
    std::vector<Token> ops;
    for (int i = 0; i < knobs.depth; ++i) {
      if (sub == "add") {
        ops.push_back(tok::kPlus);
      } else if (sub == "mul") {
        ops.push_back(tok::kTimes);
      } else if (sub == "mod") {
        ops.push_back(tok::kMod);
      } else {
        static constexpr Token kOps[] = {tok::kPlus, tok::kTimes, tok::kMod};
        ops.push_back(kOps[rng.below(3)]);
      }
    }
    std::vector<std::int64_t> nums;
    nums.push_back(rng.range(0, max_operand));
    for (Token op : ops) {
      nums.push_back(op == tok::kMod ? rng.range(1, max_operand)
                                     : rng.range(0, max_operand));
    }
    TokenSeq trace;
    auto value = reduce(nums, ops, &trace);
    if (!value) {
      continue;
    }
    if (knobs.target_answer && *value != *knobs.target_answer) {
      continue;
    }
    Problem p;
    p.kind = TaskKind::kMath;
    p.subdomain = sub;
    p.prompt.push_back(tok::kTaskMath);
    for (std::size_t i = 0; i < nums.size(); ++i) {
      if (i > 0) {
        p.prompt.push_back(ops[i - 1]);
      }
      const TokenSeq digits = number_tokens(nums[i]);
      p.prompt.insert(p.prompt.end(), digits.begin(), digits.end());
    }
    p.ground_truth = MathTruth{*value};
    p.reference = wrap_response(knobs.with_reasoning ? trace : TokenSeq{},
                                number_tokens(*value));
    return p;
  }
  throw std::invalid_argument("math generator could not satisfy the knobs");
}

struct CodeStep {
  Token op;  // kPlus or kTimes
  std::optional<std::int64_t> constant;  // nullopt means x
};

std::optional<std::int64_t> run_chain(const std::vector<CodeStep>& steps,
                                      std::int64_t x) {
  std::int64_t acc = x;
  for (const auto& s : steps) {
    auto v = apply(s.op, acc, s.constant.value_or(x));
    if (!v) {
      return std::nullopt;
    }
    acc = *v;
  }
  return acc;
}

Problem generate_code(const DifficultyKnobs& knobs, Rng& rng) {
  const int depth = std::max(knobs.depth, 1);
  const int max_operand = std::max(knobs.max_operand, 1);
  const int min_tests = std::max(knobs.min_tests, 1);
  const int max_tests = std::clamp(knobs.max_tests, min_tests, 10);
  std::vector<CodeStep> steps;
  for (int i = 0; i < depth; ++i) {
    const Token op = rng.below(2) == 0 ? tok::kPlus : tok::kTimes;
    if (i == 0 && rng.below(4) == 0) {
      steps.push_back({op, std::nullopt});
    } else {
      steps.push_back({op, rng.range(1, max_operand)});
    }
  }
  Problem p;
  p.kind = TaskKind::kCode;
  bool uses_x = false;
  bool all_add = true;
  bool all_mul = true;
  p.prompt = {tok::kTaskCode, tok::kVarX};
  TokenSeq program;
  for (const auto& s : steps) {
    p.prompt.push_back(s.op);
    const Token instr = s.op == tok::kPlus ? tok::kOpAdd : tok::kOpMul;
    if (s.constant) {
      const TokenSeq digits = number_tokens(*s.constant);
      p.prompt.insert(p.prompt.end(), digits.begin(), digits.end());
      program.push_back(tok::kOpPush);
      program.insert(program.end(), digits.begin(), digits.end());
    } else {
      uses_x = true;
      p.prompt.push_back(tok::kVarX);
      program.push_back(tok::kOpDup);
    }
    program.push_back(instr);
    all_add = all_add && s.op == tok::kPlus;
    all_mul = all_mul && s.op == tok::kTimes;
  }
  p.subdomain = uses_x ? "poly" : all_add ? "add" : all_mul ? "mul" : "mixed";

  const int num_tests = rng.range(min_tests, max_tests);
  const auto inputs = rng.sample_without_replacement(10, static_cast<std::size_t>(num_tests));
  CodeTruth truth;
  for (std::size_t x : inputs) {
    const auto y = run_chain(steps, static_cast<std::int64_t>(x));
    if (!y) {
      throw std::logic_error("code generator overflow");
    }
    truth.tests.push_back({{static_cast<std::int64_t>(x)}, {*y}});
  }
  p.ground_truth = truth;
  p.reference = wrap_response({}, program);
  return p;
}

Problem generate_format(const DifficultyKnobs& knobs, Rng& rng) {
  const int req = std::max(knobs.num_required, 0);
  const int forb = std::max(knobs.num_forbidden, 0);
  if (req + forb > tok::kNumSymbols) {
    throw std::invalid_argument("format: num_required + num_forbidden exceeds symbol count");
  }
  const int lo = std::max({knobs.min_length, req, 1});
  const int hi = std::max(knobs.max_length, lo);
  const int length = rng.range(lo, hi);
  const auto order = rng.sample_without_replacement(tok::kNumSymbols, tok::kNumSymbols);

  Problem p;
  p.kind = TaskKind::kFormat;
  FormatTruth truth;
  truth.constraints.push_back({ConstraintType::kLength, length});
  p.prompt = {tok::kTaskFormat, tok::kConstraintLength};
  const TokenSeq digits = number_tokens(length);
  p.prompt.insert(p.prompt.end(), digits.begin(), digits.end());
  std::vector<Token> required;
  for (int i = 0; i < req; ++i) {
    const Token s = tok::symbol(static_cast<int>(order[static_cast<std::size_t>(i)]));
    required.push_back(s);
    truth.constraints.push_back({ConstraintType::kRequire, s});
    p.prompt.push_back(tok::kConstraintRequire);
    p.prompt.push_back(s);
  }
  for (int i = 0; i < forb; ++i) {
    const Token s = tok::symbol(static_cast<int>(order[static_cast<std::size_t>(req + i)]));
    truth.constraints.push_back({ConstraintType::kForbid, s});
    p.prompt.push_back(tok::kConstraintForbid);
    p.prompt.push_back(s);
  }
  p.subdomain = std::string("len") + (req > 0 ? "+req" : "") + (forb > 0 ? "+forbid" : "");

  TokenSeq answer = required;
  const Token filler = required.empty()
                           ? tok::symbol(static_cast<int>(order[static_cast<std::size_t>(forb)]))
                           : required.front();
  while (static_cast<int>(answer.size()) < length) {
    answer.push_back(filler);
  }
  p.ground_truth = truth;
  p.reference = wrap_response({}, answer);
  return p;
}

bool check_format(const FormatTruth& truth, std::span<const Token> answer) {
  for (const auto& c : truth.constraints) {
    const auto has = [&](std::int64_t t) {
      return std::find(answer.begin(), answer.end(), static_cast<Token>(t)) !=
             answer.end();
    };
    switch (c.type) {
      case ConstraintType::kLength:
        if (static_cast<std::int64_t>(answer.size()) != c.value) {
          return false;
        }
        break;
      case ConstraintType::kRequire:
        if (!has(c.value)) {
          return false;
        }
        break;
      case ConstraintType::kForbid:
        if (has(c.value)) {
          return false;
        }
        break;
    }
  }
  return true;
}

std::string_view constraint_name(ConstraintType t) {
  switch (t) {
    case ConstraintType::kLength:
      return "length";
    case ConstraintType::kRequire:
      return "require";
    case ConstraintType::kForbid:
      return "forbid";
  }
  return "?";
}

ConstraintType constraint_from_name(std::string_view s) {
  if (s == "length") return ConstraintType::kLength;
  if (s == "require") return ConstraintType::kRequire;
  if (s == "forbid") return ConstraintType::kForbid;
  throw std::invalid_argument("unknown constraint type '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kMath:
      return "math";
    case TaskKind::kCode:
      return "code";
    case TaskKind::kFormat:
      return "format";
  }
  return "?";
}

TaskKind task_kind_from_string(std::string_view name) {
  for (TaskKind k : kAllTaskKinds) {
    if (to_string(k) == name) {
      return k;
    }
  }
  throw std::invalid_argument("unknown task kind '" + std::string(name) + "'");
}

void validate_problem(const Problem& p) {
  if (p.id.empty()) {
    throw std::invalid_argument("problem id is empty");
  }
  if (p.meta_pass_rate && !(*p.meta_pass_rate >= 0.0 && *p.meta_pass_rate <= 1.0)) {
    throw std::invalid_argument("meta_pass_rate outside [0, 1] for " + p.id);
  }
  switch (p.kind) {
    case TaskKind::kMath:
      if (!std::holds_alternative<MathTruth>(p.ground_truth)) {
        throw std::invalid_argument("math problem without integer answer: " + p.id);
      }
      break;
    case TaskKind::kCode: {
      const auto* t = std::get_if<CodeTruth>(&p.ground_truth);
      if (t == nullptr || t->tests.empty()) {
        throw std::invalid_argument("code problem without tests: " + p.id);
      }
      break;
    }
    case TaskKind::kFormat: {
      const auto* t = std::get_if<FormatTruth>(&p.ground_truth);
      if (t == nullptr || t->constraints.empty()) {
        throw std::invalid_argument("format problem without constraints: " + p.id);
      }
      break;
    }
  }
}

std::vector<Problem> generate_problems(TaskKind kind, int count,
                                       const DifficultyKnobs& knobs,
                                       std::uint64_t seed) {
  if (count < 1) {
    throw std::invalid_argument("generate_problems: count must be >= 1");
  }
  if (knobs.depth < 1) {
    throw std::invalid_argument("generate_problems: depth must be >= 1");
  }
  std::vector<Problem> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(kind),
                               static_cast<std::uint64_t>(i)}));
    Problem p;
    switch (kind) {
      case TaskKind::kMath:
        p = generate_math(knobs, rng);
        break;
      case TaskKind::kCode:
        p = generate_code(knobs, rng);
        break;
      case TaskKind::kFormat:
        p = generate_format(knobs, rng);
        break;
    }
    p.id = make_id(kind, seed, i);
    out.push_back(std::move(p));
  }
  return out;
}

std::optional<ResponseSegments> split_response(std::span<const Token> r) {
  std::size_t end = r.size();
  if (end > 0 && r[end - 1] == tok::kStop) {
    --end;
  }
  if (end < 4 || r[0] != tok::kThinkOpen || r[end - 1] != tok::kAnswerClose) {
    return std::nullopt;
  }
  std::size_t i = 1;
  while (i < end && !tok::is_delimiter(r[i])) {
    ++i;
  }
  if (i >= end || r[i] != tok::kThinkClose) {
    return std::nullopt;
  }
  const std::size_t think_end = i;
  if (i + 1 >= end || r[i + 1] != tok::kAnswerOpen) {
    return std::nullopt;
  }
  const std::size_t answer_begin = i + 2;
  std::size_t j = answer_begin;
  while (j < end && !tok::is_delimiter(r[j])) {
    ++j;
  }
  if (j != end - 1) {
    return std::nullopt;
  }
  return ResponseSegments{r.subspan(1, think_end - 1),
                          r.subspan(answer_begin, j - answer_begin)};
}

Verdict verify(const Problem& problem, std::span<const Token> response) {
  const auto seg = split_response(response);
  if (!seg) {
    return Verdict::kUnparsable;
  }
  switch (problem.kind) {
    case TaskKind::kMath: {
      const auto* truth = std::get_if<MathTruth>(&problem.ground_truth);
      const auto value = parse_number(TokenSeq(seg->answer.begin(), seg->answer.end()));
      if (truth == nullptr || !value) {
        return Verdict::kUnparsable;
      }
      return *value == truth->answer ? Verdict::kCorrect : Verdict::kIncorrect;
    }
    case TaskKind::kCode: {
      const auto* truth = std::get_if<CodeTruth>(&problem.ground_truth);
      if (truth == nullptr) {
        return Verdict::kUnparsable;
      }
      for (const auto& test : truth->tests) {
        const ExecResult res = interpret_program(seg->answer, test.input);
        if (res.failure == ExecFailure::kMalformed) {
          return Verdict::kUnparsable;
        }
        if (!res.ok() || res.stack != test.output) {
          return Verdict::kIncorrect;
        }
      }
      return Verdict::kCorrect;
    }
    case TaskKind::kFormat: {
      const auto* truth = std::get_if<FormatTruth>(&problem.ground_truth);
      if (truth == nullptr) {
        return Verdict::kUnparsable;
      }
      return check_format(*truth, seg->answer) ? Verdict::kCorrect
                                               : Verdict::kIncorrect;
    }
  }
  return Verdict::kUnparsable;
}

Reward reward(Verdict verdict) {
  switch (verdict) {
    case Verdict::kCorrect:
      return {1.0, true};
    case Verdict::kIncorrect:
      return {0.0, true};
    case Verdict::kUnparsable:
      return {0.0, false};
  }
  return {0.0, false};
}

ExecResult interpret_program(std::span<const Token> program,
                             std::span<const std::int64_t> inputs,
                             int step_budget) {
  ExecResult res;
  // Syntax pass first so a malformed program is reported regardless of
  // where execution would have stopped.
  for (std::size_t i = 0; i < program.size(); ++i) {
    const Token t = program[i];
    if (t == tok::kOpPush) {
      if (i + 1 >= program.size() || !tok::is_digit(program[i + 1])) {
        res.failure = ExecFailure::kMalformed;
        return res;
      }
      while (i + 1 < program.size() && tok::is_digit(program[i + 1])) {
        ++i;
      }
    } else if (t != tok::kOpAdd && t != tok::kOpMul && t != tok::kOpDup &&
               t != tok::kOpSwap) {
      res.failure = ExecFailure::kMalformed;
      return res;
    }
  }

  auto& st = res.stack;
  st.assign(inputs.begin(), inputs.end());
  int steps = 0;
  for (std::size_t i = 0; i < program.size(); ++i) {
    if (++steps > step_budget) {
      res.failure = ExecFailure::kBudgetExhausted;
      return res;
    }
    const Token t = program[i];
    if (t == tok::kOpPush) {
      TokenSeq digits;
      while (i + 1 < program.size() && tok::is_digit(program[i + 1])) {
        digits.push_back(program[++i]);
      }
      const auto v = parse_number(digits);
      if (!v) {
        res.failure = ExecFailure::kOverflow;
        return res;
      }
      st.push_back(*v);
      continue;
    }
    if (t == tok::kOpDup) {
      if (st.empty()) {
        res.failure = ExecFailure::kUnderflow;
        return res;
      }
      st.push_back(st.back());
      continue;
    }
    if (st.size() < 2) {
      res.failure = ExecFailure::kUnderflow;
      return res;
    }
    const std::int64_t b = st.back();
    st.pop_back();
    const std::int64_t a = st.back();
    st.pop_back();
    if (t == tok::kOpSwap) {
      st.push_back(b);
      st.push_back(a);
      continue;
    }
    std::int64_t r = 0;
    const bool overflow = t == tok::kOpAdd ? __builtin_add_overflow(a, b, &r)
                                           : __builtin_mul_overflow(a, b, &r);
    if (overflow) {
      res.failure = ExecFailure::kOverflow;
      return res;
    }
    st.push_back(r);
  }
  return res;
}

std::string problem_to_json(const Problem& p) {
  json j;
  j["id"] = p.id;
  j["kind"] = std::string(to_string(p.kind));
  j["prompt"] = p.prompt;
  json gt = json::object();
  std::visit(
      [&gt](const auto& truth) {
        using T = std::decay_t<decltype(truth)>;
        if constexpr (std::is_same_v<T, MathTruth>) {
          gt["answer"] = truth.answer;
        } else if constexpr (std::is_same_v<T, CodeTruth>) {
          gt["tests"] = json::array();
          for (const auto& t : truth.tests) {
            gt["tests"].push_back({{"input", t.input}, {"output", t.output}});
          }
        } else {
          gt["constraints"] = json::array();
          for (const auto& c : truth.constraints) {
            gt["constraints"].push_back(
                {{"type", std::string(constraint_name(c.type))}, {"value", c.value}});
          }
        }
      },
      p.ground_truth);
  j["ground_truth"] = std::move(gt);
  j["subdomain"] = p.subdomain;
  j["meta_pass_rate"] = p.meta_pass_rate ? json(*p.meta_pass_rate) : json(nullptr);
  j["reference"] = p.reference;
  return j.dump();
}

Problem problem_from_json(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("problem record is not JSON: ") + e.what());
  }
  try {
    static const std::set<std::string> kFields = {
        "id", "kind", "prompt", "ground_truth", "subdomain", "meta_pass_rate", "reference"};
    for (const auto& [key, _] : j.items()) {
      if (kFields.count(key) == 0) {
        throw std::invalid_argument("unknown problem field '" + key + "'");
      }
    }
    Problem p;
    p.id = j.at("id").get<std::string>();
    p.kind = task_kind_from_string(j.at("kind").get<std::string>());
    p.prompt = j.at("prompt").get<TokenSeq>();
    p.subdomain = j.value("subdomain", std::string{});
    if (j.contains("meta_pass_rate") && !j["meta_pass_rate"].is_null()) {
      p.meta_pass_rate = j["meta_pass_rate"].get<double>();
    }
    if (j.contains("reference")) {
      p.reference = j["reference"].get<TokenSeq>();
    }
    const json& gt = j.at("ground_truth");
    switch (p.kind) {
      case TaskKind::kMath:
        p.ground_truth = MathTruth{gt.at("answer").get<std::int64_t>()};
        break;
      case TaskKind::kCode: {
        CodeTruth t;
        for (const auto& tc : gt.at("tests")) {
          t.tests.push_back({tc.at("input").get<std::vector<std::int64_t>>(),
                             tc.at("output").get<std::vector<std::int64_t>>()});
        }
        p.ground_truth = std::move(t);
        break;
      }
      case TaskKind::kFormat: {
        FormatTruth t;
        for (const auto& c : gt.at("constraints")) {
          t.constraints.push_back({constraint_from_name(c.at("type").get<std::string>()),
                                   c.at("value").get<std::int64_t>()});
        }
        p.ground_truth = std::move(t);
        break;
      }
    }
    validate_problem(p);
    return p;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed problem record: ") + e.what());
  }
}

std::string pool_to_jsonl(std::span<const Problem> pool) {
  std::string out;
  for (const auto& p : pool) {
    out += problem_to_json(p);
    out += '\n';
  }
  return out;
}

std::vector<Problem> pool_from_jsonl(std::string_view text) {
  std::vector<Problem> pool;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    ++line_no;
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      continue;
    }
    try {
      Problem p = problem_from_json(line);
      if (!ids.insert(p.id).second) {
        throw std::invalid_argument("duplicate problem id '" + p.id + "'");
      }
      pool.push_back(std::move(p));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pool;
}

}  // namespace grlab
