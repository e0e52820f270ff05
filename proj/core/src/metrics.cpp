#include "grlab/metrics.hpp"

#include <nlohmann/json.hpp>
#include <stdexcept>

namespace grlab {

using nlohmann::json;

namespace {

constexpr const char* kKindNames[3] = {"math", "code", "format"};

json per_task(const std::array<std::optional<double>, 3>& values) {
  json j = json::object();
  for (std::size_t i = 0; i < 3; ++i) {
    j[kKindNames[i]] = values[i] ? json(*values[i]) : json(nullptr);
  }
  return j;
}

std::array<std::optional<double>, 3> per_task_from(const json& j) {
  std::array<std::optional<double>, 3> out;
  for (std::size_t i = 0; i < 3; ++i) {
    const json& v = j.at(kKindNames[i]);
    if (!v.is_null()) {
      out[i] = v.get<double>();
    }
  }
  return out;
}

}  // namespace

std::string to_json_line(const MetricsRecord& r) {
  json j;
  j["type"] = "train";
  j["outer"] = r.outer;
  j["inner"] = r.inner;
  j["version"] = r.version;
  j["mean_reward"] = per_task(r.mean_reward);
  j["mean_reward_all"] = r.mean_reward_all;
  j["loss"] = r.loss;
  j["fraction_clipped"] = r.fraction_clipped;
  j["mean_abs_log_ratio"] = r.mean_abs_log_ratio;
  j["mean_advantage"] = r.mean_advantage;
  j["num_groups"] = r.num_groups;
  j["degenerate_groups"] = r.degenerate_groups;
  j["collapsed_groups"] = r.collapsed_groups;
  j["masked_rollouts"] = r.masked_rollouts;
  j["flagged"] = r.flagged;
  if (r.wall_clock_s) {
    j["wall_clock_s"] = *r.wall_clock_s;
  }
  return j.dump();
}

std::string to_json_line(const EvalRecord& r) {
  json j;
  j["type"] = "eval";
  j["outer"] = r.outer;
  j["pass_at_1"] = per_task(r.pass_at_1);
  j["overall"] = r.overall;
  return j.dump();
}

StreamRecord parse_stream_record(std::string_view line) {
  try {
    const json j = json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "eval") {
      EvalRecord r;
      r.outer = j.at("outer").get<int>();
      r.pass_at_1 = per_task_from(j.at("pass_at_1"));
      r.overall = j.at("overall").get<double>();
      return r;
    }
    if (type != "train") {
      throw std::invalid_argument("unknown record type '" + type + "'");
    }
    MetricsRecord r;
    r.outer = j.at("outer").get<int>();
    r.inner = j.at("inner").get<int>();
    r.version = j.at("version").get<std::uint64_t>();
    r.mean_reward = per_task_from(j.at("mean_reward"));
    r.mean_reward_all = j.at("mean_reward_all").get<double>();
    r.loss = j.at("loss").get<double>();
    r.fraction_clipped = j.at("fraction_clipped").get<double>();
    r.mean_abs_log_ratio = j.at("mean_abs_log_ratio").get<double>();
    r.mean_advantage = j.at("mean_advantage").get<double>();
    r.num_groups = j.at("num_groups").get<std::size_t>();
    r.degenerate_groups = j.at("degenerate_groups").get<std::size_t>();
    r.collapsed_groups = j.at("collapsed_groups").get<std::size_t>();
    r.masked_rollouts = j.at("masked_rollouts").get<std::size_t>();
    r.flagged = j.at("flagged").get<bool>();
    if (j.contains("wall_clock_s")) {
      r.wall_clock_s = j["wall_clock_s"].get<double>();
    }
    return r;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed metrics record: ") + e.what());
  }
}

}  // namespace grlab
