#include <functional>
#include "grlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include "grlab/chunked_loss.hpp"
#include "grlab/parallel.hpp"
#include "grlab/rng.hpp"
#include "transformer.hpp"

namespace grlab {

namespace {

using detail::TransformerLayout;
using detail::TransformerState;

// Items per gradient accumulation block. Fixed so the reduction order does
// not depend on the worker count.
constexpr std::size_t kGradBlock = 8;

void check_lengths(const ArchDescriptor& arch, std::size_t prompt_len,
                   std::size_t tokens_len) {
  if (prompt_len + tokens_len > static_cast<std::size_t>(arch.max_seq_len)) {
    throw std::length_error("sequence of length " +
                            std::to_string(prompt_len + tokens_len) +
                            " exceeds max_seq_len " +
                            std::to_string(arch.max_seq_len));
  }
}

double log_softmax_at(std::span<const double> logits, Token t) {
  double mx = logits[0];
  for (double l : logits) {
    mx = std::max(mx, l);
  }
  double sum = 0.0;
  for (double l : logits) {
    sum += std::exp(l - mx);
  }
  return logits[static_cast<std::size_t>(t)] - mx - std::log(sum);
}

void softmax_into(std::span<const double> logits, double inv_temp,
                  std::vector<double>& out) {
  out.resize(logits.size());
  double mx = logits[0] * inv_temp;
  for (double l : logits) {
    mx = std::max(mx, l * inv_temp);
  }
  double sum = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    out[v] = std::exp(logits[v] * inv_temp - mx);
    sum += out[v];
  }
  for (double& p : out) {
    p /= sum;
  }
}

void check_tokens(const ArchDescriptor& arch, std::span<const Token> seq) {
  for (Token t : seq) {
    if (t < 0 || t >= arch.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(t) +
                              " outside vocabulary");
    }
  }
}

// Scores prompt ++ tokens. For each response position j, calls
// visit(j, logits_row) in order.
template <typename Visit>
void score_sequence(const PolicyParams& params, std::span<const Token> prompt,
                    std::span<const Token> tokens, Visit&& visit) {
  const ArchDescriptor& arch = params.arch;
  check_lengths(arch, prompt.size(), tokens.size());
  check_tokens(arch, prompt);
  check_tokens(arch, tokens);
  const std::size_t V = static_cast<std::size_t>(arch.vocab_size);
  if (arch.kind == PolicyKind::kTabular) {
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      const std::size_t pos = prompt.size() + j;
      visit(j, std::span<const double>(params.values.data() + pos * V, V));
    }
    return;
  }
  if (tokens.empty()) {
    return;
  }
  TransformerLayout layout(arch);
  const int total = static_cast<int>(prompt.size() + tokens.size());
  TransformerState state(layout, params.values, total);
  state.push(tok::kStop);
  for (Token t : prompt) {
    state.push(t);
  }
  std::vector<double> logits(V);
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (j > 0) {
      state.push(tokens[j - 1]);
    }
    state.logits(state.size() - 1, logits);
    visit(j, std::span<const double>(logits));
  }
}

// Adds grad of sum_j w_j log pi(tokens_j | ...) for one sequence.
void accumulate_token_weighted(const PolicyParams& params,
                               std::span<const Token> prompt,
                               std::span<const Token> tokens,
                               std::span<const double> weights,
                               std::span<double> grad) {
  const ArchDescriptor& arch = params.arch;
  check_lengths(arch, prompt.size(), tokens.size());
  check_tokens(arch, prompt);
  check_tokens(arch, tokens);
  const std::size_t V = static_cast<std::size_t>(arch.vocab_size);
  std::vector<double> probs;
  if (arch.kind == PolicyKind::kTabular) {
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      const double w = weights[j];
      if (w == 0.0) {
        continue;
      }
      const std::size_t pos = prompt.size() + j;
      std::span<const double> row(params.values.data() + pos * V, V);
      softmax_into(row, 1.0, probs);
      double* g = grad.data() + pos * V;
      for (std::size_t v = 0; v < V; ++v) {
        g[v] -= w * probs[v];
      }
      g[static_cast<std::size_t>(tokens[j])] += w;
    }
    return;
  }
  if (tokens.empty()) {
    return;
  }
  TransformerLayout layout(arch);
  const int total = static_cast<int>(prompt.size() + tokens.size());
  TransformerState state(layout, params.values, total);
  state.push(tok::kStop);
  for (Token t : prompt) {
    state.push(t);
  }
  for (std::size_t j = 0; j + 1 < tokens.size(); ++j) {
    state.push(tokens[j]);
  }
  const std::size_t d = static_cast<std::size_t>(arch.embed_dim);
  std::vector<double> d_final(static_cast<std::size_t>(state.size()) * d, 0.0);
  std::vector<double> logits(V);
  bool any = false;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const double w = weights[j];
    if (w == 0.0) {
      continue;
    }
    any = true;
    const int pos = static_cast<int>(prompt.size() + j);
    state.logits(pos, logits);
    softmax_into(logits, 1.0, probs);
    for (std::size_t v = 0; v < V; ++v) {
      logits[v] = -w * probs[v];
    }
    logits[static_cast<std::size_t>(tokens[j])] += w;
    state.head_backward(
        pos, logits,
        std::span<double>(d_final.data() + static_cast<std::size_t>(pos) * d, d),
        grad);
  }
  if (any) {
    state.backward(d_final, grad);
  }
}

template <typename Item, typename Weights>
std::vector<double> blocked_gradient(const PolicyParams& params,
                                     std::span<const Item> items,
                                     Weights&& weights_of) {
  const std::size_t n = params.values.size();
  const std::size_t num_blocks = (items.size() + kGradBlock - 1) / kGradBlock;
  std::vector<std::vector<double>> partial(num_blocks);
  parallel_for(num_blocks, [&](std::size_t b) {
    std::vector<double> g(n, 0.0);
    const std::size_t end = std::min(items.size(), (b + 1) * kGradBlock);
    std::vector<double> scratch;
    for (std::size_t i = b * kGradBlock; i < end; ++i) {
      std::span<const double> w = weights_of(items[i], scratch);
      accumulate_token_weighted(params, items[i].prompt, items[i].tokens, w, g);
    }
    partial[b] = std::move(g);
  });
  std::vector<double> grad(n, 0.0);
  for (const auto& g : partial) {
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] += g[i];
    }
  }
  return grad;
}

}  // namespace

std::string_view to_string(PolicyKind kind) {
  return kind == PolicyKind::kTabular ? "tabular" : "tiny-transformer";
}

PolicyKind policy_kind_from_string(std::string_view name) {
  if (name == "tabular") {
    return PolicyKind::kTabular;
  }
  if (name == "tiny-transformer") {
    return PolicyKind::kTinyTransformer;
  }
  throw std::invalid_argument("unknown policy kind '" + std::string(name) + "'");
}

void ArchDescriptor::validate() const {
  if (vocab_size < 2) {
    throw std::invalid_argument("vocab_size must be >= 2");
  }
  if (max_seq_len < 1) {
    throw std::invalid_argument("max_seq_len must be >= 1");
  }
  if (kind == PolicyKind::kTinyTransformer) {
    if (embed_dim < 1 || num_layers < 1 || num_heads < 1 || ffn_dim < 1) {
      throw std::invalid_argument(
          "embed_dim, num_layers, num_heads and ffn_dim must be >= 1");
    }
    if (embed_dim % num_heads != 0) {
      throw std::invalid_argument("embed_dim not divisible by heads");
    }
  }
}

std::size_t ArchDescriptor::parameter_count() const {
  if (kind == PolicyKind::kTabular) {
    return static_cast<std::size_t>(vocab_size) *
           static_cast<std::size_t>(max_seq_len);
  }
  return TransformerLayout(*this).total;
}

PolicyParams init_policy(const ArchDescriptor& arch, std::uint64_t seed) {
  arch.validate();
  PolicyParams p;
  p.arch = arch;
  p.values.assign(arch.parameter_count(), 0.0);
  if (arch.kind == PolicyKind::kTinyTransformer) {
    detail::init_transformer(TransformerLayout(arch), p.values, seed);
  }
  return p;
}

void validate_params(const PolicyParams& params) {
  params.arch.validate();
  if (params.values.size() != params.arch.parameter_count()) {
    throw std::invalid_argument("parameter vector length " +
                                std::to_string(params.values.size()) +
                                " does not match architecture (" +
                                std::to_string(params.arch.parameter_count()) +
                                ")");
  }
  for (double v : params.values) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("parameter vector contains non-finite values");
    }
  }
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double l : logits) {
    mx = std::max(mx, l);
  }
  double sum = 0.0;
  for (double l : logits) {
    sum += std::exp(l - mx);
  }
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t v = 0; v < logits.size(); ++v) {
    out[v] = logits[v] - lse;
  }
  return out;
}

std::vector<double> next_token_logits(const PolicyParams& params,
                                      std::span<const Token> prefix) {
  const ArchDescriptor& arch = params.arch;
  if (prefix.size() >= static_cast<std::size_t>(arch.max_seq_len)) {
    throw std::length_error("prefix length " + std::to_string(prefix.size()) +
                            " must be < max_seq_len " +
                            std::to_string(arch.max_seq_len));
  }
  check_tokens(arch, prefix);
  const std::size_t V = static_cast<std::size_t>(arch.vocab_size);
  if (arch.kind == PolicyKind::kTabular) {
    const double* row = params.values.data() + prefix.size() * V;
    return {row, row + V};
  }
  TransformerLayout layout(arch);
  TransformerState state(layout, params.values,
                         static_cast<int>(prefix.size()) + 1);
  state.push(tok::kStop);
  for (Token t : prefix) {
    state.push(t);
  }
  std::vector<double> logits(V);
  state.logits(state.size() - 1, logits);
  return logits;
}

namespace {

// Shared decoding loop; temperature nullopt means greedy.
Rollout decode(const PolicyParams& params, std::span<const Token> prompt,
               int max_new, std::optional<double> temperature,
               std::uint64_t seed) {
  const ArchDescriptor& arch = params.arch;
  if (prompt.size() >= static_cast<std::size_t>(arch.max_seq_len)) {
    throw std::length_error("prompt leaves no room for a response");
  }
  if (max_new < 1) {
    throw std::invalid_argument("max_new must be >= 1");
  }
  if (temperature && !(*temperature > 0.0)) {
    throw std::invalid_argument("temperature must be > 0");
  }
  check_tokens(arch, prompt);
  const std::size_t V = static_cast<std::size_t>(arch.vocab_size);
  const std::size_t room = static_cast<std::size_t>(arch.max_seq_len) - prompt.size();
  const std::size_t limit = std::min(room, static_cast<std::size_t>(max_new));

  Rng rng(seed);
  Rollout r;
  std::vector<double> logits(V), probs;

  std::optional<TransformerLayout> layout;
  std::optional<TransformerState> state;
  if (arch.kind == PolicyKind::kTinyTransformer) {
    layout.emplace(arch);
    state.emplace(*layout, params.values,
                  static_cast<int>(prompt.size() + limit));
    state->push(tok::kStop);
    for (Token t : prompt) {
      state->push(t);
    }
  }

  for (std::size_t j = 0; j < limit; ++j) {
    if (state) {
      if (j > 0) {
        state->push(r.tokens.back());
      }
      state->logits(state->size() - 1, logits);
    } else {
      const double* row = params.values.data() + (prompt.size() + j) * V;
      std::copy(row, row + V, logits.begin());
    }
    Token next;
    if (temperature) {
      softmax_into(logits, 1.0 / *temperature, probs);
      next = static_cast<Token>(rng.categorical(probs));
    } else {
      next = static_cast<Token>(
          std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    const double lp = log_softmax_at(logits, next);
    r.tokens.push_back(next);
    r.behavior_logprobs.push_back(lp);
    r.behavior_seq_logprob += lp;
    if (next == tok::kStop) {
      break;
    }
  }
  return r;
}

}  // namespace

Rollout sample_rollout(const PolicyParams& params, std::span<const Token> prompt,
                       int max_new, double temperature, std::uint64_t seed) {
  return decode(params, prompt, max_new, temperature, seed);
}

Rollout greedy_rollout(const PolicyParams& params, std::span<const Token> prompt,
                       int max_new) {
  return decode(params, prompt, max_new, std::nullopt, 0);
}

std::vector<double> token_logprobs(const PolicyParams& params,
                                   std::span<const Token> prompt,
                                   std::span<const Token> tokens) {
  std::vector<double> out(tokens.size());
  score_sequence(params, prompt, tokens,
                 [&](std::size_t j, std::span<const double> logits) {
                   out[j] = log_softmax_at(logits, tokens[j]);
                 });
  return out;
}

double sequence_logprob(const PolicyParams& params, std::span<const Token> prompt,
                        std::span<const Token> tokens) {
  double total = 0.0;
  for (double lp : token_logprobs(params, prompt, tokens)) {
    total += lp;
  }
  return total;
}

std::vector<double> grad_weighted_logprob(
    const PolicyParams& params, std::span<const WeightedSequence> items) {
  for (const auto& it : items) {
    if (!std::isfinite(it.weight)) {
      throw std::invalid_argument("grad_weighted_logprob: non-finite weight");
    }
  }
  return blocked_gradient(
      params, items,
      [](const WeightedSequence& it,
         std::vector<double>& scratch) -> std::span<const double> {
        scratch.assign(it.tokens.size(), it.weight);
        return scratch;
      });
}

std::vector<double> grad_token_weighted_logprob(
    const PolicyParams& params, std::span<const TokenWeightedSequence> items) {
  for (const auto& it : items) {
    if (it.weights.size() != it.tokens.size()) {
      throw std::invalid_argument(
          "grad_token_weighted_logprob: weights/tokens length mismatch");
    }
    for (double w : it.weights) {
      if (!std::isfinite(w)) {
        throw std::invalid_argument(
            "grad_token_weighted_logprob: non-finite weight");
      }
    }
  }
  return blocked_gradient(
      params, items,
      [](const TokenWeightedSequence& it,
         std::vector<double>&) -> std::span<const double> { return it.weights; });
}

double token_nll(const PolicyParams& params,
                 std::span<const SequencePair> batch) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : batch) {
    for (double lp : token_logprobs(params, s.prompt, s.response)) {
      total -= lp;
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

NllResult token_nll_and_grad(const PolicyParams& params,
                             std::span<const SequencePair> batch,
                             int chunk_size) {
  const ArchDescriptor& arch = params.arch;
  NllResult out;
  for (const auto& s : batch) {
    check_lengths(arch, s.prompt.size(), s.response.size());
    out.num_tokens += s.response.size();
  }
  out.grad.assign(params.values.size(), 0.0);
  if (out.num_tokens == 0) {
    return out;
  }
  const double inv_n = 1.0 / static_cast<double>(out.num_tokens);

  if (arch.kind == PolicyKind::kTabular) {
    std::vector<TokenWeightedSequence> items;
    std::vector<std::vector<double>> weights;
    weights.reserve(batch.size());
    for (const auto& s : batch) {
      weights.emplace_back(s.response.size(), -inv_n);
      items.push_back({s.prompt, s.response, weights.back()});
    }
    out.grad = grad_token_weighted_logprob(params, items);
    out.loss = token_nll(params, batch);
    return out;
  }

  // Stack the final hidden rows of every response position and push them
  // through the chunked head loss; then backpropagate each sequence.
  TransformerLayout layout(arch);
  const std::size_t d = static_cast<std::size_t>(arch.embed_dim);
  const std::size_t V = static_cast<std::size_t>(arch.vocab_size);
  std::vector<TransformerState> states;
  states.reserve(batch.size());
  std::vector<double> hidden;
  std::vector<std::int32_t> targets;
  hidden.reserve(out.num_tokens * d);
  for (const auto& s : batch) {
    check_tokens(arch, s.prompt);
    check_tokens(arch, s.response);
    const int total = static_cast<int>(s.prompt.size() + s.response.size());
    states.emplace_back(layout, params.values, std::max(total, 1));
    TransformerState& st = states.back();
    if (s.response.empty()) {
      continue;
    }
    st.push(tok::kStop);
    for (Token t : s.prompt) {
      st.push(t);
    }
    for (std::size_t j = 0; j + 1 < s.response.size(); ++j) {
      st.push(s.response[j]);
    }
    for (std::size_t j = 0; j < s.response.size(); ++j) {
      auto row = st.final_hidden(static_cast<int>(s.prompt.size() + j));
      hidden.insert(hidden.end(), row.begin(), row.end());
      targets.push_back(s.response[j]);
    }
  }

  HeadInputs in;
  in.hidden = hidden;
  in.head_weights = std::span<const double>(params.values.data() + layout.head, d * V);
  in.targets = targets;
  in.num_rows = targets.size();
  in.hidden_dim = d;
  in.vocab_size = V;
  ChunkPlan plan;
  plan.chunk_size = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(chunk_size, 1)),
                                            1, in.num_rows);
  HeadLossResult head = chunked_nll(in, plan);
  out.loss = head.loss;
  for (std::size_t i = 0; i < head.grad_head.size(); ++i) {
    out.grad[layout.head + i] += head.grad_head[i];
  }

  std::size_t row = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    if (s.response.empty()) {
      continue;
    }
    const TransformerState& st = states[b];
    std::vector<double> d_final(static_cast<std::size_t>(st.size()) * d, 0.0);
    for (std::size_t j = 0; j < s.response.size(); ++j, ++row) {
      std::copy_n(head.grad_hidden.data() + row * d, d,
                  d_final.data() + (s.prompt.size() + j) * d);
    }
    st.backward(d_final, out.grad);
  }
  return out;
}

double relative_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) {
    return 0.0;
  }
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return diff / denom;
}

double central_difference(const std::function<double(double)>& f, double x,
                          double h, int order) {
  const auto diff = [&](double k) { return f(x + k * h) - f(x - k * h); };
  switch (order) {
    case 2:
      return diff(1) / (2.0 * h);
    case 4:
      return (8.0 * diff(1) - diff(2)) / (12.0 * h);
    case 6:
      return (45.0 * diff(1) - 9.0 * diff(2) + diff(3)) / (60.0 * h);
    default:
      throw std::invalid_argument("central_difference: order must be 2, 4 or 6");
  }
}

double finite_difference_check(const PolicyParams& params,
                               std::span<const WeightedSequence> items,
                               double step, std::uint64_t seed,
                               std::size_t min_coords, int order) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("finite_difference_check: step must be > 0");
  }
  const std::vector<double> analytic = grad_weighted_logprob(params, items);
  const std::size_t n = params.values.size();
  Rng rng(seed);
  std::vector<std::size_t> coords =
      rng.sample_without_replacement(n, std::min(n, std::max<std::size_t>(min_coords, 64)));

  PolicyParams probe = params;
  auto objective = [&](const PolicyParams& p) {
    double total = 0.0;
    for (const auto& it : items) {
      if (it.weight != 0.0) {
        total += it.weight * sequence_logprob(p, it.prompt, it.tokens);
      }
    }
    return total;
  };
  double worst = 0.0;
  for (std::size_t c : coords) {
    const double orig = probe.values[c];
    const double numeric = central_difference(
        [&](double x) {
          probe.values[c] = x;
          return objective(probe);
        },
        orig, step, order);
    probe.values[c] = orig;
    worst = std::max(worst, relative_error(analytic[c], numeric));
  }
  return worst;
}

}  // namespace grlab
