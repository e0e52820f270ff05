#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grlab/verdict.hpp"
#include "grlab/vocab.hpp"

namespace grlab {

enum class PolicyKind { kTabular, kTinyTransformer };

std::string_view to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(std::string_view name);

// Shape of a policy. Tabular policies only use vocab_size and max_seq_len.
struct ArchDescriptor {
  PolicyKind kind = PolicyKind::kTabular;
  int vocab_size = tok::kVocabSize;
  int max_seq_len = 16;
  int embed_dim = 0;
  int num_layers = 0;
  int num_heads = 0;
  int ffn_dim = 0;

  // Throws std::invalid_argument naming the offending dimension.
  void validate() const;
  std::size_t parameter_count() const;

  bool operator==(const ArchDescriptor&) const = default;
};

// Flat parameter vector. Updates produce a new version instead of mutating
// a shared instance.
struct PolicyParams {
  ArchDescriptor arch;
  std::vector<double> values;
  std::uint64_t version = 0;
};

// One sampled response. behavior_* are temperature-1 log-probabilities under
// the params that produced the sample; they play the role of pi_old once the
// params move on.
struct Rollout {
  std::string problem_id;
  TokenSeq tokens;
  std::vector<double> behavior_logprobs;
  double behavior_seq_logprob = 0.0;
  Verdict verdict = Verdict::kUnparsable;
  double reward = 0.0;
  bool grad_mask = false;
};

struct WeightedSequence {
  std::span<const Token> prompt;
  std::span<const Token> tokens;
  double weight = 0.0;
};

// Per-token weights; weights.size() must equal tokens.size().
struct TokenWeightedSequence {
  std::span<const Token> prompt;
  std::span<const Token> tokens;
  std::span<const double> weights;
};

PolicyParams init_policy(const ArchDescriptor& arch, std::uint64_t seed);

// Throws if values are the wrong length or contain non-finite entries.
void validate_params(const PolicyParams& params);

std::vector<double> next_token_logits(const PolicyParams& params,
                                      std::span<const Token> prefix);

// Samples until the stop token (kept in the output) or max_new tokens.
Rollout sample_rollout(const PolicyParams& params,
                       std::span<const Token> prompt, int max_new,
                       double temperature, std::uint64_t seed);

// Argmax decoding (lowest id wins ties); the temperature -> 0 limit.
Rollout greedy_rollout(const PolicyParams& params,
                       std::span<const Token> prompt, int max_new);

double sequence_logprob(const PolicyParams& params,
                        std::span<const Token> prompt,
                        std::span<const Token> tokens);

std::vector<double> token_logprobs(const PolicyParams& params,
                                   std::span<const Token> prompt,
                                   std::span<const Token> tokens);

// Gradient of sum_i w_i * log pi(tokens_i | prompt_i). Zero-weight items are
// skipped, so an all-zero batch yields an exactly zero vector.
std::vector<double> grad_weighted_logprob(
    const PolicyParams& params, std::span<const WeightedSequence> items);

std::vector<double> grad_token_weighted_logprob(
    const PolicyParams& params, std::span<const TokenWeightedSequence> items);

struct SequencePair {
  std::span<const Token> prompt;
  std::span<const Token> response;
};

struct NllResult {
  double loss = 0.0;  // mean over response tokens
  std::vector<double> grad;
  std::size_t num_tokens = 0;
};

// Token cross-entropy over the response tokens of a batch. The transformer
// routes its head through the chunked loss with the given chunk size.
NllResult token_nll_and_grad(const PolicyParams& params,
                             std::span<const SequencePair> batch,
                             int chunk_size = 16);

double token_nll(const PolicyParams& params,
                 std::span<const SequencePair> batch);

// Central difference of the given order of accuracy (2, 4 or 6), using
// 2, 4 or 6 evaluations of f at x +- k h.
double central_difference(const std::function<double(double)>& f, double x,
                          double h, int order = 4);

// Worst per-coordinate relative error between grad_weighted_logprob and
// central_difference of sum_i w_i log pi over a seeded coordinate subset of
// at least min_coords entries (all coordinates when fewer exist). The error
// for one coordinate is |a - n| / max(|a|, |n|, kGradCheckFloor), and 0 when
// both sides vanish.
inline constexpr double kGradCheckFloor = 1e-6;

double finite_difference_check(const PolicyParams& params,
                               std::span<const WeightedSequence> items,
                               double step, std::uint64_t seed = 0,
                               std::size_t min_coords = 64, int order = 4);

double relative_error(double analytic, double numeric);

// Log-softmax of a logit row (max-subtracted).
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace grlab
