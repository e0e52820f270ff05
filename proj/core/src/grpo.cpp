#include "grlab/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "grlab/parallel.hpp"

namespace grlab {

void ClipConfig::validate() const {
  if (!(eps_low > 0.0 && eps_low <= eps_high && eps_high < 1.0)) {
    throw std::invalid_argument("clip: require 0 < eps_low <= eps_high < 1");
  }
}

std::string_view to_string(RatioMode mode) {
  return mode == RatioMode::kGspo ? "gspo" : "grpo";
}

RatioMode ratio_mode_from_string(std::string_view name) {
  if (name == "gspo") return RatioMode::kGspo;
  if (name == "grpo") return RatioMode::kGrpo;
  throw std::invalid_argument("unknown ratio mode '" + std::string(name) + "'");
}

AdvantageResult group_advantages(std::span<const double> rewards,
                                 const std::vector<bool>& masks,
                                 double std_floor) {
  if (rewards.empty() || masks.size() != rewards.size()) {
    throw std::invalid_argument(
        "group_advantages: rewards and masks must be nonempty and equal length");
  }
  if (!(std_floor > 0.0)) {
    throw std::invalid_argument("group_advantages: std_floor must be > 0");
  }
  AdvantageResult out;
  out.advantages.assign(rewards.size(), 0.0);
  std::size_t count = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (masks[i]) {
      sum += rewards[i];
      ++count;
    }
  }
  if (count == 0) {
    out.degenerate = true;
    return out;
  }
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (masks[i]) {
      const double d = rewards[i] - mean;
      sq += d * d;
    }
  }
  const double std = std::sqrt(sq / static_cast<double>(count));
  out.mean = mean;
  out.std = std;
  if (std < std_floor) {
    out.collapsed = true;
    return out;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (masks[i]) {
      out.advantages[i] = (rewards[i] - mean) / std;
    }
  }
  return out;
}

RolloutGroup make_group(std::string problem_id, TokenSeq prompt,
                        std::vector<Rollout> rollouts, double std_floor) {
  std::vector<double> rewards;
  std::vector<bool> masks;
  for (const auto& r : rollouts) {
    rewards.push_back(r.reward);
    masks.push_back(r.grad_mask);
  }
  AdvantageResult adv = group_advantages(rewards, masks, std_floor);
  RolloutGroup g;
  g.problem_id = std::move(problem_id);
  g.prompt = std::move(prompt);
  g.rollouts = std::move(rollouts);
  g.advantages = std::move(adv.advantages);
  g.group_mean = adv.mean;
  g.group_std = adv.std;
  g.degenerate = adv.degenerate;
  g.collapsed = adv.collapsed;
  return g;
}

double sequence_ratio(const PolicyParams& params, const Rollout& rollout,
                      std::span<const Token> prompt) {
  if (rollout.tokens.empty()) {
    throw std::invalid_argument("sequence_ratio: empty token sequence");
  }
  const double lp = sequence_logprob(params, prompt, rollout.tokens);
  return std::exp((lp - rollout.behavior_seq_logprob) /
                  static_cast<double>(rollout.tokens.size()));
}

double token_ratio(const PolicyParams& params, const Rollout& rollout,
                   std::span<const Token> prompt, std::size_t step) {
  if (step >= rollout.tokens.size() || step >= rollout.behavior_logprobs.size()) {
    throw std::out_of_range("token_ratio: step out of range");
  }
  const std::vector<double> lps = token_logprobs(params, prompt, rollout.tokens);
  return std::exp(lps[step] - rollout.behavior_logprobs[step]);
}

SurrogateResult clipped_surrogate(double ratio, double advantage,
                                  const ClipConfig& clip) {
  const double unclipped = ratio * advantage;
  const double clipped =
      std::clamp(ratio, 1.0 - clip.eps_low, 1.0 + clip.eps_high) * advantage;
  if (clipped < unclipped) {
    return {clipped, true};
  }
  return {unclipped, false};
}

namespace {

struct Assembled {
  double loss = 0.0;
  LossStats stats;
  // Rollout slots and their per-token gradient weights, unmasked and
  // nonzero-weight only, in group-then-rollout order.
  std::vector<const RolloutGroup*> group_of;
  std::vector<const Rollout*> rollout_of;
  std::vector<std::vector<double>> weights;
};

Assembled assemble(const PolicyParams& params,
                   std::span<const RolloutGroup> groups,
                   const LossOptions& options) {
  if (groups.empty()) {
    throw std::invalid_argument("gspo_loss_and_grad: no groups");
  }
  options.clip.validate();

  struct Slot {
    const RolloutGroup* group;
    std::size_t index;
  };
  std::vector<Slot> slots;
  for (const auto& g : groups) {
    if (g.advantages.size() != g.rollouts.size()) {
      throw std::invalid_argument("group " + g.problem_id +
                                  ": advantages/rollouts length mismatch");
    }
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      const Rollout& r = g.rollouts[i];
      if (!r.grad_mask) {
        continue;
      }
      if (r.tokens.empty()) {
        throw std::invalid_argument("group " + g.problem_id +
                                    ": unmasked rollout with no tokens");
      }
      if (r.behavior_logprobs.size() != r.tokens.size()) {
        throw std::invalid_argument("group " + g.problem_id +
                                    ": behavior logprobs length mismatch");
      }
      slots.push_back({&g, i});
    }
  }

  std::vector<std::vector<double>> current(slots.size());
  parallel_for(slots.size(), [&](std::size_t k) {
    const Rollout& r = slots[k].group->rollouts[slots[k].index];
    current[k] = token_logprobs(params, slots[k].group->prompt, r.tokens);
  });

  Assembled out;
  const double ng = static_cast<double>(groups.size());
  double total = 0.0;
  double clipped_count = 0.0;
  double clip_denominator = 0.0;
  double abs_log_ratio = 0.0;
  double adv_sum = 0.0;
  std::size_t k = 0;
  for (const auto& g : groups) {
    const std::size_t active = static_cast<std::size_t>(
        std::count_if(g.rollouts.begin(), g.rollouts.end(),
                      [](const Rollout& r) { return r.grad_mask; }));
    if (active == 0) {
      ++out.stats.degenerate_groups;
      continue;
    }
    if (g.collapsed) {
      ++out.stats.collapsed_groups;
    }
    const double geff = options.nominal_group_size
                            ? static_cast<double>(g.rollouts.size())
                            : static_cast<double>(active);
    const double scale = -1.0 / ng / geff;
    double group_sum = 0.0;
    for (; k < slots.size() && slots[k].group == &g; ++k) {
      const Rollout& r = g.rollouts[slots[k].index];
      const double a = g.advantages[slots[k].index];
      const std::vector<double>& lps = current[k];
      const std::size_t len = r.tokens.size();
      const double dlen = static_cast<double>(len);
      double lp = 0.0;
      for (double v : lps) {
        lp += v;
      }
      const double delta = lp - r.behavior_seq_logprob;
      abs_log_ratio += std::abs(delta) / dlen;
      adv_sum += a;
      std::vector<double> w(len, 0.0);
      bool any = false;
      if (options.mode == RatioMode::kGspo) {
        const double ratio = std::exp(delta / dlen);
        const SurrogateResult s = clipped_surrogate(ratio, a, options.clip);
        group_sum += s.value;
        clip_denominator += 1.0;
        if (s.clipped) {
          clipped_count += 1.0;
        } else {
          const double wt = scale * a * ratio / dlen;
          if (wt != 0.0) {
            std::fill(w.begin(), w.end(), wt);
            any = true;
          }
        }
      } else {
        double tok_sum = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
          const double ratio = std::exp(lps[t] - r.behavior_logprobs[t]);
          const SurrogateResult s = clipped_surrogate(ratio, a, options.clip);
          tok_sum += s.value;
          clip_denominator += 1.0;
          if (s.clipped) {
            clipped_count += 1.0;
          } else {
            w[t] = scale * a * ratio / dlen;
            any = any || w[t] != 0.0;
          }
        }
        group_sum += tok_sum / dlen;
      }
      ++out.stats.active_rollouts;
      if (any) {
        out.group_of.push_back(&g);
        out.rollout_of.push_back(&r);
        out.weights.push_back(std::move(w));
      }
    }
    total += group_sum / geff;
  }
  out.loss = -total / ng;
  if (out.stats.active_rollouts > 0) {
    const double n = static_cast<double>(out.stats.active_rollouts);
    out.stats.mean_abs_log_ratio = abs_log_ratio / n;
    out.stats.mean_advantage = adv_sum / n;
    out.stats.fraction_clipped = clipped_count / clip_denominator;
  }
  return out;
}

}  // namespace

LossResult gspo_loss_and_grad(const PolicyParams& params,
                              std::span<const RolloutGroup> groups,
                              const LossOptions& options) {
  Assembled a = assemble(params, groups, options);
  std::vector<TokenWeightedSequence> items;
  items.reserve(a.weights.size());
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    items.push_back({a.group_of[i]->prompt, a.rollout_of[i]->tokens, a.weights[i]});
  }
  LossResult out;
  out.loss = a.loss;
  out.stats = a.stats;
  out.grad = grad_token_weighted_logprob(params, items);
  return out;
}

double gspo_loss(const PolicyParams& params,
                 std::span<const RolloutGroup> groups,
                 const LossOptions& options) {
  return assemble(params, groups, options).loss;
}

}  // namespace grlab
