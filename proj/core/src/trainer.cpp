#include "grlab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "grlab/parallel.hpp"
#include "grlab/rng.hpp"

namespace grlab {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) {
    throw std::invalid_argument(message);
  }
}

void validate_weights(const TaskWeights& w) {
  double sum = 0.0;
  for (double x : w) {
    require(std::isfinite(x) && x >= 0.0, "task_mixture: weights must be nonnegative");
    sum += x;
  }
  require(std::abs(sum - 1.0) <= 1e-9, "task_mixture: weights must sum to 1");
}

int response_budget(const PolicyParams& params, const Problem& problem, int max_new) {
  const int room = params.arch.max_seq_len - static_cast<int>(problem.prompt.size());
  return max_new == 0 ? room : std::min(max_new, room);
}

}  // namespace

void TrainConfig::validate() const {
  require(group_size >= 2, "group_size: must be >= 2");
  require(inner_steps >= 1, "inner_steps: must be >= 1");
  require(std::isfinite(learning_rate) && learning_rate > 0.0,
          "learning_rate: must be a positive real");
  try {
    clip.validate();
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("clip: require 0 < eps_low <= eps_high < 1");
  }
  validate_weights(task_mixture);
  require(batch_size >= 1, "batch_size: must be >= 1");
  require(std::isfinite(temperature) && temperature > 0.0,
          "temperature: must be a positive real");
  require(max_new >= 0, "max_new: must be >= 0");
  require(std::isfinite(std_floor) && std_floor > 0.0, "std_floor: must be > 0");
  require(outer_iterations >= 0, "outer_iterations: must be >= 0");
  for (std::size_t i = 0; i < curriculum_stages.size(); ++i) {
    const auto& s = curriculum_stages[i];
    require(s.max_len >= 1, "curriculum_stages[" + std::to_string(i) + "].max_len: must be >= 1");
    require(s.data_stage == 1 || s.data_stage == 2,
            "curriculum_stages[" + std::to_string(i) + "].data_stage: must be 1 or 2");
  }
}

std::array<int, 3> apportion(const TaskWeights& weights, int size) {
  validate_weights(weights);
  require(size >= 1, "apportion: size must be >= 1");
  std::array<int, 3> counts{};
  std::array<double, 3> remainder{};
  int assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double q = weights[i] * size;
    counts[i] = static_cast<int>(std::floor(q + 1e-9));
    // Quantized so that remainders equal up to rounding noise tie, and the
    // tie then goes to the lower index.
    remainder[i] = std::round((q - counts[i]) * 1e9);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainder[a] > remainder[b];
  });
  for (std::size_t k = 0; assigned < size; k = (k + 1) % 3) {
    if (weights[order[k]] > 0.0) {
      ++counts[order[k]];
      ++assigned;
    }
  }
  for (std::size_t k = 2; assigned > size; k = (k + 2) % 3) {
    if (counts[order[k]] > 0) {
      --counts[order[k]];
      --assigned;
    }
  }
  return counts;
}

Minibatch build_minibatch(const TaskPools& pools, const TaskWeights& weights,
                          int size, std::uint64_t seed) {
  for (std::size_t k = 0; k < 3; ++k) {
    if (weights[k] > 0.0 && pools[k].empty()) {
      throw std::invalid_argument(
          "build_minibatch: empty pool for positively weighted kind " +
          std::string(to_string(kAllTaskKinds[k])));
    }
  }
  const std::array<int, 3> quota = apportion(weights, size);
  Minibatch out;
  for (std::size_t k = 0; k < 3; ++k) {
    if (quota[k] == 0) {
      continue;
    }
    const auto& pool = pools[k];
    const std::size_t q = static_cast<std::size_t>(quota[k]);
    Rng rng(derive_seed(seed, {k}));
    if (q <= pool.size()) {
      for (std::size_t i : rng.sample_without_replacement(pool.size(), q)) {
        out.problems.push_back(pool[i]);
      }
    } else {
      for (std::size_t i = 0; i < q; ++i) {
        out.problems.push_back(pool[rng.below(pool.size())]);
      }
      out.with_replacement += q;
    }
  }
  return out;
}

std::uint64_t minibatch_seed(const TrainConfig& config, int outer) {
  return derive_seed(config.seed, {static_cast<std::uint64_t>(outer), 1});
}

std::uint64_t rollout_seed(const TrainConfig& config, int outer,
                           std::size_t problem_index, std::size_t rollout_index) {
  return derive_seed(config.seed, {static_cast<std::uint64_t>(outer), 2,
                                   problem_index, rollout_index});
}

std::vector<RolloutGroup> collect_groups(const PolicyParams& params,
                                         std::span<const Problem> batch,
                                         const TrainConfig& config, int outer) {
  const std::size_t G = static_cast<std::size_t>(config.group_size);
  std::vector<Rollout> flat(batch.size() * G);
  parallel_for(flat.size(), [&](std::size_t idx) {
    const std::size_t p = idx / G;
    const std::size_t i = idx % G;
    const Problem& problem = batch[p];
    Rollout r = sample_rollout(params, problem.prompt,
                               response_budget(params, problem, config.max_new),
                               config.temperature, rollout_seed(config, outer, p, i));
    r.problem_id = problem.id;
    r.verdict = verify(problem, r.tokens);
    const Reward rw = reward(r.verdict);
    r.reward = rw.value;
    r.grad_mask = rw.grad_mask;
    flat[idx] = std::move(r);
  });
  std::vector<RolloutGroup> groups;
  groups.reserve(batch.size());
  for (std::size_t p = 0; p < batch.size(); ++p) {
    std::vector<Rollout> rs(std::make_move_iterator(flat.begin() + static_cast<std::ptrdiff_t>(p * G)),
                            std::make_move_iterator(flat.begin() + static_cast<std::ptrdiff_t>((p + 1) * G)));
    groups.push_back(make_group(batch[p].id, batch[p].prompt, std::move(rs),
                                config.std_floor));
  }
  return groups;
}

PolicyParams gradient_step(const PolicyParams& params,
                           std::span<const double> grad, double learning_rate) {
  if (grad.size() != params.values.size()) {
    throw std::invalid_argument("gradient_step: gradient length mismatch");
  }
  PolicyParams next = params;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    next.values[i] -= learning_rate * grad[i];
  }
  ++next.version;
  return next;
}

OuterResult rl_outer_iteration(const PolicyParams& params,
                               const TaskPools& pools,
                               const TrainConfig& config, int outer,
                               const InnerStepObserver& observer) {
  config.validate();
  const Minibatch batch = build_minibatch(pools, config.task_mixture,
                                          config.batch_size,
                                          minibatch_seed(config, outer));
  const std::vector<RolloutGroup> groups =
      collect_groups(params, batch.problems, config, outer);

  std::array<double, 3> reward_sum{};
  std::array<std::size_t, 3> reward_count{};
  double reward_all = 0.0;
  std::size_t rollouts_all = 0;
  std::size_t masked = 0;
  bool signal = false;
  for (std::size_t p = 0; p < groups.size(); ++p) {
    const std::size_t k = index_of(batch.problems[p].kind);
    for (const auto& r : groups[p].rollouts) {
      reward_sum[k] += r.reward;
      ++reward_count[k];
      reward_all += r.reward;
      ++rollouts_all;
      masked += r.grad_mask ? 0 : 1;
    }
    signal = signal || (!groups[p].degenerate && !groups[p].collapsed);
  }

  LossOptions loss_options;
  loss_options.clip = config.clip;
  loss_options.mode = config.mode;
  loss_options.nominal_group_size = config.nominal_group_size;

  OuterResult out;
  out.params = params;
  out.flagged = !signal;
  out.with_replacement = batch.with_replacement;
  for (int s = 0; s < config.inner_steps; ++s) {
    const LossResult lr = gspo_loss_and_grad(out.params, groups, loss_options);
    if (observer) {
      observer(s, groups, lr);
    }
    MetricsRecord m;
    m.outer = outer;
    m.inner = s;
    m.version = out.params.version;
    for (std::size_t k = 0; k < 3; ++k) {
      if (reward_count[k] > 0) {
        m.mean_reward[k] = reward_sum[k] / static_cast<double>(reward_count[k]);
      }
    }
    m.mean_reward_all = rollouts_all > 0 ? reward_all / static_cast<double>(rollouts_all) : 0.0;
    m.loss = lr.loss;
    m.fraction_clipped = lr.stats.fraction_clipped;
    m.mean_abs_log_ratio = lr.stats.mean_abs_log_ratio;
    m.mean_advantage = lr.stats.mean_advantage;
    m.num_groups = groups.size();
    m.degenerate_groups = lr.stats.degenerate_groups;
    m.collapsed_groups = lr.stats.collapsed_groups;
    m.masked_rollouts = masked;
    m.flagged = out.flagged;
    out.metrics.push_back(m);
    if (signal) {
      out.params = gradient_step(out.params, lr.grad, config.learning_rate);
    }
  }
  return out;
}

EvalResult evaluate(const PolicyParams& params,
                    std::span<const Problem> problems, int n,
                    std::uint64_t seed, int max_new, double temperature,
                    const Verifier& verifier) {
  if (n < 1) {
    throw std::invalid_argument("evaluate: n must be >= 1");
  }
  std::vector<double> score(problems.size(), 0.0);
  parallel_for(problems.size(), [&](std::size_t i) {
    const Problem& problem = problems[i];
    const int budget = response_budget(params, problem, max_new);
    int correct = 0;
    for (int j = 0; j < n; ++j) {
      const Rollout r =
          n == 1 ? greedy_rollout(params, problem.prompt, budget)
                 : sample_rollout(params, problem.prompt, budget, temperature,
                                  derive_seed(seed, {i, static_cast<std::uint64_t>(j)}));
      const Verdict v = verifier ? verifier(problem, r.tokens) : verify(problem, r.tokens);
      correct += v == Verdict::kCorrect ? 1 : 0;
    }
    score[i] = static_cast<double>(correct) / static_cast<double>(n);
  });
  EvalResult out;
  std::array<double, 3> sum{};
  double total = 0.0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const std::size_t k = index_of(problems[i].kind);
    sum[k] += score[i];
    ++out.counts[k];
    total += score[i];
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (out.counts[k] > 0) {
      out.pass_at_1[k] = sum[k] / static_cast<double>(out.counts[k]);
    }
  }
  out.overall = problems.empty() ? 0.0 : total / static_cast<double>(problems.size());
  return out;
}

RunResult run(const TrainConfig& config, const PolicyParams& initial,
              const TaskPools& pools, const RunCallbacks& callbacks,
              const RunOptions& options) {
  config.validate();
  validate_params(initial);
  if (options.start_iteration < 0 || options.start_iteration > config.outer_iterations) {
    throw std::invalid_argument("run: start_iteration outside [0, outer_iterations]");
  }
  const auto eval_at = [&](int k, const PolicyParams& p) {
    if (options.heldout.empty() || !callbacks.on_eval) {
      return;
    }
    const EvalResult e = evaluate(p, options.heldout, 1, 0, config.max_new);
    callbacks.on_eval(EvalRecord{k, e.pass_at_1, e.overall});
  };
  const auto started = std::chrono::steady_clock::now();
  RunResult out{initial, 0};
  for (int k = options.start_iteration; k < config.outer_iterations; ++k) {
    if (k == 0 || (options.eval_every > 0 && k % options.eval_every == 0)) {
      eval_at(k, out.params);
    }
    OuterResult r;
    try {
      r = rl_outer_iteration(out.params, pools, config, k);
    } catch (const std::exception& e) {
      throw std::runtime_error("outer iteration " + std::to_string(k) + ": " + e.what());
    }
    out.flagged_iterations += r.flagged ? 1 : 0;
    for (auto& m : r.metrics) {
      if (config.record_wall_clock) {
        m.wall_clock_s = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - started)
                             .count();
      }
      if (callbacks.on_metrics) {
        callbacks.on_metrics(m);
      }
    }
    out.params = std::move(r.params);
    if (callbacks.on_checkpoint) {
      callbacks.on_checkpoint(k, out.params);
    }
  }
  eval_at(config.outer_iterations, out.params);
  return out;
}

std::vector<Trace> reference_traces(std::span<const Problem> problems,
                                    int data_stage) {
  std::vector<Trace> out;
  for (const auto& p : problems) {
    if (!p.reference.empty()) {
      out.push_back({p.id, p.prompt, p.reference, data_stage});
    }
  }
  return out;
}

SftResult sft_train(const PolicyParams& params, std::span<const Trace> traces,
                    const SftOptions& options) {
  require(!options.stages.empty(), "sft: at least one curriculum stage is required");
  require(options.steps_per_stage >= 0, "sft: steps_per_stage must be >= 0");
  require(options.learning_rate > 0.0, "sft: learning_rate must be > 0");
  require(options.batch_size >= 0, "sft: batch_size must be >= 0");
  validate_params(params);

  SftResult out;
  out.params = params;
  const std::size_t n = params.values.size();
  std::vector<Trace> extra;
  for (std::size_t si = 0; si < options.stages.size(); ++si) {
    const CurriculumStage& stage = options.stages[si];
    if (options.extra_traces) {
      auto more = options.extra_traces(static_cast<int>(si), out.params);
      extra.insert(extra.end(), std::make_move_iterator(more.begin()),
                   std::make_move_iterator(more.end()));
    }
    StageReport report;
    report.stage = static_cast<int>(si) + 1;
    report.max_len = stage.max_len;
    report.data_stage = stage.data_stage;
    std::vector<SequencePair> pairs;
    const auto consider = [&](const Trace& t) {
      if (t.data_stage != stage.data_stage) {
        return;
      }
      if (static_cast<int>(t.prompt.size() + t.response.size()) > stage.max_len) {
        ++report.excluded_too_long;
        return;
      }
      pairs.push_back({t.prompt, t.response});
    };
    for (const auto& t : traces) {
      consider(t);
    }
    for (const auto& t : extra) {
      consider(t);
    }
    report.eligible = pairs.size();
    if (pairs.empty()) {
      throw std::invalid_argument("sft: stage " + std::to_string(report.stage) +
                                  " (max_len " + std::to_string(stage.max_len) +
                                  ", data_stage " + std::to_string(stage.data_stage) +
                                  ") has no eligible traces");
    }
    report.loss_before = token_nll(out.params, pairs);

    std::vector<double> m(n, 0.0), v(n, 0.0);
    double b1t = 1.0, b2t = 1.0;
    std::vector<SequencePair> batch;
    for (int step = 0; step < options.steps_per_stage; ++step) {
      std::span<const SequencePair> use = pairs;
      if (options.batch_size > 0 &&
          static_cast<std::size_t>(options.batch_size) < pairs.size()) {
        Rng rng(derive_seed(options.seed, {si, static_cast<std::uint64_t>(step)}));
        batch.clear();
        for (std::size_t i : rng.sample_without_replacement(
                 pairs.size(), static_cast<std::size_t>(options.batch_size))) {
          batch.push_back(pairs[i]);
        }
        use = batch;
      }
      const NllResult res = token_nll_and_grad(out.params, use, options.chunk_size);
      report.step_losses.push_back(res.loss);
      b1t *= options.beta1;
      b2t *= options.beta2;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = res.grad[i];
        m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g;
        v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
        const double mhat = m[i] / (1.0 - b1t);
        const double vhat = v[i] / (1.0 - b2t);
        out.params.values[i] -= options.learning_rate * mhat / (std::sqrt(vhat) + options.adam_eps);
      }
      ++out.params.version;
    }
    report.loss_after = token_nll(out.params, pairs);
    out.stages.push_back(std::move(report));
  }
  return out;
}

RegenerateResult regenerate_traces(const PolicyParams& params,
                                   std::span<const Problem> problems,
                                   int attempts, std::uint64_t seed,
                                   int max_new, double temperature,
                                   int data_stage) {
  require(attempts >= 1, "regenerate_traces: attempts must be >= 1");
  std::vector<std::optional<Trace>> found(problems.size());
  parallel_for(problems.size(), [&](std::size_t i) {
    const Problem& problem = problems[i];
    const int budget = response_budget(params, problem, max_new);
    for (int a = 0; a < attempts; ++a) {
      Rollout r = sample_rollout(params, problem.prompt, budget, temperature,
                                 derive_seed(seed, {i, static_cast<std::uint64_t>(a)}));
      if (verify(problem, r.tokens) == Verdict::kCorrect) {
        found[i] = Trace{problem.id, problem.prompt, std::move(r.tokens), data_stage};
        return;
      }
    }
  });
  RegenerateResult out;
  for (auto& f : found) {
    if (f) {
      out.traces.push_back(std::move(*f));
    } else {
      ++out.omitted;
    }
  }
  return out;
}

}  // namespace grlab
