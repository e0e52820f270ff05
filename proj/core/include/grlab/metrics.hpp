#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace grlab {

// One record per (outer, inner) update.
struct MetricsRecord {
  int outer = 0;
  int inner = 0;
  std::uint64_t version = 0;
  // Indexed by TaskKind; unset when the kind is absent from the batch.
  std::array<std::optional<double>, 3> mean_reward;
  double mean_reward_all = 0.0;
  double loss = 0.0;
  double fraction_clipped = 0.0;
  double mean_abs_log_ratio = 0.0;
  double mean_advantage = 0.0;
  std::size_t num_groups = 0;
  std::size_t degenerate_groups = 0;
  std::size_t collapsed_groups = 0;
  std::size_t masked_rollouts = 0;
  bool flagged = false;
  // Only filled when timing is requested; it would otherwise break
  // byte-identical reruns.
  std::optional<double> wall_clock_s;

  bool operator==(const MetricsRecord&) const = default;
};

// Greedy heldout evaluation at the start of outer iteration `outer`.
struct EvalRecord {
  int outer = 0;
  std::array<std::optional<double>, 3> pass_at_1;
  double overall = 0.0;

  bool operator==(const EvalRecord&) const = default;
};

using StreamRecord = std::variant<MetricsRecord, EvalRecord>;

// Single-line JSON with a "type" field of "train" or "eval".
std::string to_json_line(const MetricsRecord& record);
std::string to_json_line(const EvalRecord& record);

// Throws std::invalid_argument on malformed input.
StreamRecord parse_stream_record(std::string_view line);

}  // namespace grlab
