#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grlab/policy.hpp"
#include "grlab/tasks.hpp"

namespace grlab {

struct BandSpec {
  double low = 0.0;
  double high = 0.8;
  bool low_inclusive = false;
  bool high_inclusive = true;

  // Requires 0 <= low <= high <= 1.
  void validate() const;
  bool contains(double p) const;
};

struct FilterOptions {
  int n = 5;
  double temperature = 1.0;
  // Response budget per rollout; 0 fills the remaining context.
  int max_new = 0;
  // Unset: score is the pass rate. Set: score is 1 when any of the first k
  // rollouts is Correct, else 0.
  std::optional<int> top_k;
};

struct FilterRecord {
  std::string problem_id;
  int n = 0;
  int num_correct = 0;
  double pass_rate = 0.0;
  // The quantity compared against the band.
  double score = 0.0;
  bool retained = false;
  double band_low = 0.0;
  double band_high = 0.0;
  std::uint64_t seed = 0;
  std::vector<TokenSeq> responses;
  std::vector<Verdict> verdicts;
};

// Rollout j (1-based) uses seed ^ j. retained/band fields are left unset.
FilterRecord estimate_pass_rate(const PolicyParams& params,
                                const Problem& problem,
                                const FilterOptions& options,
                                std::uint64_t seed);

struct FilterResult {
  std::vector<Problem> retained;
  std::vector<FilterRecord> records;
};

// Problem i is scored with derive_seed(seed, {i}); retained keeps pool order.
FilterResult filter_pool(const PolicyParams& params,
                         std::span<const Problem> pool, const BandSpec& band,
                         const FilterOptions& options, std::uint64_t seed);

struct PrefilterResult {
  std::vector<Problem> kept;
  std::size_t missing_metadata = 0;
};

// Keeps 0 < meta_pass_rate <= bound; missing metadata is dropped and counted.
PrefilterResult prefilter_by_metadata(std::span<const Problem> pool,
                                      double bound);

// Cuts every subdomain stratum to the smallest stratum size with a seeded
// draw without replacement. Output preserves pool order.
std::vector<Problem> stratified_balance(std::span<const Problem> pool,
                                        std::uint64_t seed);

std::string filter_record_to_json(const FilterRecord& record);
FilterRecord filter_record_from_json(std::string_view line);
std::string filter_report_to_jsonl(std::span<const FilterRecord> records);

}  // namespace grlab
