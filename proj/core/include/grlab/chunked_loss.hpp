#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace grlab {

// Language-model head inputs, all row-major views.
//   hidden:       T x d
//   head_weights: d x V
//   targets:      T entries in [0, V)
//   ignore_mask:  T entries (nonzero = position ignored) or empty for none
struct HeadInputs {
  std::span<const double> hidden;
  std::span<const double> head_weights;
  std::span<const std::int32_t> targets;
  std::span<const std::uint8_t> ignore_mask;
  std::size_t num_rows = 0;  // T
  std::size_t hidden_dim = 0;  // d
  std::size_t vocab_size = 0;  // V

  void validate() const;
  bool ignored(std::size_t t) const {
    return !ignore_mask.empty() && ignore_mask[t] != 0;
  }
};

struct HeadLossResult {
  double loss = 0.0;  // mean over unmasked rows
  std::vector<double> grad_hidden;  // T x d
  std::vector<double> grad_head;    // d x V
  std::size_t num_active = 0;
  bool degenerate = false;  // no unmasked rows
};

struct ChunkPlan {
  std::size_t chunk_size = 1;
  // Optional processing order of chunk indices. Empty means ascending, which
  // accumulates grad_head directly and reproduces the monolithic sums bit for
  // bit. A custom order accumulates per-chunk partials instead, using one
  // extra d x V buffer that the scratch tracker does not count.
  std::vector<std::size_t> order;

  std::size_t num_chunks(std::size_t num_rows) const {
    return (num_rows + chunk_size - 1) / chunk_size;
  }
};

// Counts live and peak scratch elements allocated by the loss kernels. Install
// one with ScratchScope to observe a call.
struct ScratchTracker {
  std::size_t live = 0;
  std::size_t peak = 0;
  std::size_t allocations = 0;
};

class ScratchScope {
 public:
  explicit ScratchScope(ScratchTracker& tracker);
  ~ScratchScope();
  ScratchScope(const ScratchScope&) = delete;
  ScratchScope& operator=(const ScratchScope&) = delete;

 private:
  ScratchTracker* previous_;
};

HeadLossResult monolithic_nll(const HeadInputs& inputs);

HeadLossResult chunked_nll(const HeadInputs& inputs, const ChunkPlan& plan);

struct MemoryTerm {
  std::string name;
  std::size_t elements = 0;
};

struct MemoryReport {
  std::size_t monolithic_peak = 0;
  std::size_t chunked_peak = 0;
  std::vector<MemoryTerm> monolithic_terms;  // largest first
  std::vector<MemoryTerm> chunked_terms;     // largest first

  std::string to_string() const;
};

// Projected peak element counts:
//   monolithic = T*V (logit block) + T*d (grad_hidden) + d*V (grad_head)
//   chunked    = C*V (logit block) + T*d (grad_hidden) + d*V (grad_head)
MemoryReport memory_report(std::size_t num_rows, std::size_t hidden_dim,
                           std::size_t vocab_size, std::size_t chunk_size);

}  // namespace grlab
