#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grlab/grpo.hpp"
#include "grlab/metrics.hpp"
#include "grlab/policy.hpp"
#include "grlab/tasks.hpp"

namespace grlab {

using TaskPools = std::array<std::vector<Problem>, 3>;
using TaskWeights = std::array<double, 3>;

inline constexpr TaskWeights kEqualMixture = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

struct CurriculumStage {
  int max_len = 64;
  int data_stage = 1;  // 1 = broad pool, 2 = filtered hard problems
  bool operator==(const CurriculumStage&) const = default;
};

struct TrainConfig {
  int group_size = 8;
  int inner_steps = 4;
  double learning_rate = 0.1;
  ClipConfig clip;
  RatioMode mode = RatioMode::kGspo;
  bool nominal_group_size = false;
  TaskWeights task_mixture = kEqualMixture;
  // Problems per minibatch.
  int batch_size = 12;
  double temperature = 1.0;
  // Response budget; 0 fills the remaining context.
  int max_new = 0;
  std::uint64_t seed = 0;
  double std_floor = kDefaultStdFloor;
  int outer_iterations = 10;
  std::vector<CurriculumStage> curriculum_stages = {{64, 1}, {128, 1}, {256, 2}};
  // Adds elapsed seconds to metrics records; off so reruns stay byte-identical.
  bool record_wall_clock = false;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Largest-remainder apportionment of size by weights (ties go to the lower
// index). Weights must be nonnegative and sum to 1 within 1e-9.
std::array<int, 3> apportion(const TaskWeights& weights, int size);

struct Minibatch {
  std::vector<Problem> problems;
  // Draws made with replacement because a pool was smaller than its quota.
  std::size_t with_replacement = 0;
};

Minibatch build_minibatch(const TaskPools& pools, const TaskWeights& weights,
                          int size, std::uint64_t seed);

// Seeds used by outer iteration k. Exposed so callers can replay a step.
std::uint64_t minibatch_seed(const TrainConfig& config, int outer);
std::uint64_t rollout_seed(const TrainConfig& config, int outer,
                           std::size_t problem_index, std::size_t rollout_index);

// Steps (2)-(4): G rollouts per problem from params, verified, rewarded,
// masked, with advantages computed once.
std::vector<RolloutGroup> collect_groups(const PolicyParams& params,
                                         std::span<const Problem> batch,
                                         const TrainConfig& config, int outer);

// params - learning_rate * grad, version + 1.
PolicyParams gradient_step(const PolicyParams& params,
                           std::span<const double> grad, double learning_rate);

using InnerStepObserver = std::function<void(
    int inner, const std::vector<RolloutGroup>& groups, const LossResult& loss)>;

struct OuterResult {
  PolicyParams params;
  std::vector<MetricsRecord> metrics;
  // Every group lacked signal, so the parameters were returned unchanged.
  bool flagged = false;
  std::size_t with_replacement = 0;
};

OuterResult rl_outer_iteration(const PolicyParams& params,
                               const TaskPools& pools,
                               const TrainConfig& config, int outer,
                               const InnerStepObserver& observer = {});

struct EvalResult {
  std::array<std::optional<double>, 3> pass_at_1;
  std::array<std::size_t, 3> counts{};
  double overall = 0.0;
};

using Verifier = std::function<Verdict(const Problem&, std::span<const Token>)>;

// n = 1 decodes greedily; otherwise averages n sampled rollouts per problem,
// rollout j of problem i seeded with derive_seed(seed, {i, j}).
EvalResult evaluate(const PolicyParams& params,
                    std::span<const Problem> problems, int n,
                    std::uint64_t seed, int max_new = 0,
                    double temperature = 1.0, const Verifier& verifier = {});

struct RunCallbacks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(const EvalRecord&)> on_eval;
  std::function<void(int outer, const PolicyParams&)> on_checkpoint;
};

struct RunOptions {
  int start_iteration = 0;
  // Heldout problems evaluated greedily before the first and after the last
  // iteration, and every eval_every iterations when positive.
  std::span<const Problem> heldout;
  int eval_every = 0;
};

struct RunResult {
  PolicyParams params;
  std::size_t flagged_iterations = 0;
};

RunResult run(const TrainConfig& config, const PolicyParams& initial,
              const TaskPools& pools, const RunCallbacks& callbacks = {},
              const RunOptions& options = {});

// ---- supervised fine-tuning ----

struct Trace {
  std::string problem_id;
  TokenSeq prompt;
  TokenSeq response;
  int data_stage = 1;
};

// Reference responses of generated problems as stage-tagged traces.
std::vector<Trace> reference_traces(std::span<const Problem> problems,
                                    int data_stage);

struct SftOptions {
  std::vector<CurriculumStage> stages = {{64, 1}, {128, 1}, {256, 2}};
  int steps_per_stage = 100;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Traces per step; 0 uses every eligible trace.
  int batch_size = 0;
  int chunk_size = 16;
  std::uint64_t seed = 0;
  // Called before each stage (0-based index) with the current params. The
  // returned traces join the pool for that stage and every later one.
  std::function<std::vector<Trace>(int stage, const PolicyParams& params)>
      extra_traces;
};

struct StageReport {
  int stage = 0;
  int max_len = 0;
  int data_stage = 0;
  std::size_t eligible = 0;
  std::size_t excluded_too_long = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  std::vector<double> step_losses;
};

struct SftResult {
  PolicyParams params;
  std::vector<StageReport> stages;
};

// Stages run in order. A trace is eligible for a stage when its data_stage
// matches and prompt + response fits in max_len. Adam state restarts at
// each stage.
SftResult sft_train(const PolicyParams& params, std::span<const Trace> traces,
                    const SftOptions& options);

struct RegenerateResult {
  std::vector<Trace> traces;
  std::size_t omitted = 0;
};

// Rejection sampling: up to `attempts` rollouts per problem, keeping the
// first Correct one. Attempt a of problem i uses derive_seed(seed, {i, a}).
RegenerateResult regenerate_traces(const PolicyParams& params,
                                   std::span<const Problem> problems,
                                   int attempts, std::uint64_t seed,
                                   int max_new = 0, double temperature = 1.0,
                                   int data_stage = 2);

}  // namespace grlab
