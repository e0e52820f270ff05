#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grlab/policy.hpp"

namespace grlab {

struct ClipConfig {
  double eps_low = 0.28;
  double eps_high = 0.40;

  // Requires 0 < eps_low <= eps_high < 1.
  void validate() const;
};

enum class RatioMode { kGspo, kGrpo };

std::string_view to_string(RatioMode mode);
RatioMode ratio_mode_from_string(std::string_view name);

inline constexpr double kDefaultStdFloor = 1e-8;

struct AdvantageResult {
  std::vector<double> advantages;
  double mean = 0.0;
  double std = 0.0;
  // No unmasked entries at all.
  bool degenerate = false;
  // Unmasked entries exist but their std is below the floor.
  bool collapsed = false;
};

// Population statistics over unmasked entries. Masked entries get exactly 0,
// and every advantage is exactly 0 when std < std_floor.
AdvantageResult group_advantages(std::span<const double> rewards,
                                 const std::vector<bool>& masks,
                                 double std_floor = kDefaultStdFloor);

struct RolloutGroup {
  std::string problem_id;
  TokenSeq prompt;
  std::vector<Rollout> rollouts;
  std::vector<double> advantages;
  double group_mean = 0.0;
  double group_std = 0.0;
  bool degenerate = false;
  bool collapsed = false;
};

// Fills advantages and statistics from the rollouts' rewards and masks.
RolloutGroup make_group(std::string problem_id, TokenSeq prompt,
                        std::vector<Rollout> rollouts,
                        double std_floor = kDefaultStdFloor);

// exp((log pi(o|q) - behavior_seq_logprob) / |o|).
double sequence_ratio(const PolicyParams& params, const Rollout& rollout,
                      std::span<const Token> prompt);

// pi(o_t | q, o_<t) / pi_old(o_t | q, o_<t).
double token_ratio(const PolicyParams& params, const Rollout& rollout,
                   std::span<const Token> prompt, std::size_t step);

struct SurrogateResult {
  double value = 0.0;
  bool clipped = false;
};

// min(r A, clamp(r, 1 - eps_low, 1 + eps_high) A). The clipped branch is
// reported only when it is strictly smaller, so ties count as unclipped.
SurrogateResult clipped_surrogate(double ratio, double advantage,
                                  const ClipConfig& clip);

struct LossOptions {
  ClipConfig clip;
  RatioMode mode = RatioMode::kGspo;
  // Divide each group by its nominal size instead of its unmasked count.
  bool nominal_group_size = false;
};

struct LossStats {
  // Over unmasked rollouts (gspo) or their tokens (grpo).
  double fraction_clipped = 0.0;
  // Mean over unmasked rollouts of |log pi - log pi_old| / |o|.
  double mean_abs_log_ratio = 0.0;
  double mean_advantage = 0.0;
  std::size_t degenerate_groups = 0;
  std::size_t collapsed_groups = 0;
  std::size_t active_rollouts = 0;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;
  LossStats stats;
};

// loss = -(1/|groups|) sum_g (1/G_g) sum_i surrogate_i over unmasked
// rollouts, with advantages taken as given from each group.
LossResult gspo_loss_and_grad(const PolicyParams& params,
                              std::span<const RolloutGroup> groups,
                              const LossOptions& options = {});

// Loss only, for finite-difference checks.
double gspo_loss(const PolicyParams& params,
                 std::span<const RolloutGroup> groups,
                 const LossOptions& options = {});

}  // namespace grlab
