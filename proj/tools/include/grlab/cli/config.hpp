#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "grlab/data_filter.hpp"
#include "grlab/policy.hpp"
#include "grlab/tasks.hpp"
#include "grlab/trainer.hpp"

namespace grlab::cli {

inline constexpr int kConfigSchemaVersion = 1;

// A schema violation. field is a dotted path such as "rl.learning_rate" or
// "sft.stages[1].max_len".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct DataConfig {
  int train_per_kind = 24;
  int heldout_per_kind = 8;
  // Harder problems whose traces feed data_stage 2 of the SFT curriculum.
  int stage2_per_kind = 0;
  std::array<DifficultyKnobs, 3> knobs;
  std::array<DifficultyKnobs, 3> stage2_knobs;
};

struct SftConfig {
  SftOptions options;
  // Rejection-sampling attempts per stage-2 problem, run with the params
  // reached just before the first data_stage 2 stage. 0 disables.
  int regenerate_attempts = 0;
  int max_new = 0;
  double temperature = 1.0;
};

struct FilterConfig {
  BandSpec band;
  FilterOptions options;
  std::optional<double> prefilter_bound;
  bool stratify = false;
};

struct EvalConfig {
  int n = 1;
  int max_new = 0;
  double temperature = 1.0;
};

struct Config {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  ArchDescriptor policy;
  DataConfig data;
  SftConfig sft;
  FilterConfig filter;
  // seed and curriculum_stages are filled from the top level and sft.
  TrainConfig rl;
  int eval_every = 0;
  EvalConfig eval;
};

// Parses and validates a JSON config. Every section and field is optional
// except schema_version; unknown fields are rejected.
Config parse_config(std::string_view text);

// Canonical JSON with every field spelled out; the manifest snapshot.
std::string config_to_json(const Config& config);

}  // namespace grlab::cli
