#include "grlab/cli/config.hpp"

#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>

namespace grlab::cli {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were read so that leftovers
// can be reported as unknown fields.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
    }
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void read(const std::string& key, int& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      throw ConfigError(field(key), "integer out of range");
    }
    out = static_cast<int>(x);
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(field(key), "expected a nonnegative integer");
    out = v.get<std::uint64_t>();
  }

  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    out = v.get<double>();
  }

  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(field(key), "expected a boolean");
    out = v.get<bool>();
  }

  void read(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(field(key), "expected a string");
    out = v.get<std::string>();
  }

  template <typename T>
  void read_optional(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T value{};
    read(key, value);
    out = value;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

ArchDescriptor parse_policy(const json& j, const std::string& path) {
  Section s(j, path);
  ArchDescriptor a;
  a.kind = PolicyKind::kTinyTransformer;
  a.max_seq_len = 32;
  a.embed_dim = 16;
  a.num_layers = 1;
  a.num_heads = 2;
  a.ffn_dim = 32;
  std::string kind(to_string(a.kind));
  s.read("kind", kind);
  try {
    a.kind = policy_kind_from_string(kind);
  } catch (const std::invalid_argument&) {
    throw ConfigError(s.field("kind"), "expected \"tabular\" or \"tiny-transformer\"");
  }
  s.read("max_seq_len", a.max_seq_len);
  s.read("embed_dim", a.embed_dim);
  s.read("num_layers", a.num_layers);
  s.read("num_heads", a.num_heads);
  s.read("ffn_dim", a.ffn_dim);
  s.finish();
  if (a.kind == PolicyKind::kTabular) {
    a.embed_dim = a.num_layers = a.num_heads = a.ffn_dim = 0;
  }
  check(a.max_seq_len >= 2, s.field("max_seq_len"), "must be >= 2");
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    std::string what = e.what();
    std::string f = path;
    for (const char* name : {"embed_dim", "num_layers", "num_heads", "ffn_dim"}) {
      if (what.rfind(name, 0) == 0) {
        f = s.field(name);
        break;
      }
    }
    throw ConfigError(f, what);
  }
  return a;
}

DifficultyKnobs parse_knobs(const json& j, const std::string& path, TaskKind kind) {
  Section s(j, path);
  DifficultyKnobs k;
  s.read("depth", k.depth);
  s.read("max_operand", k.max_operand);
  if (s.has("target_answer") && !s.at("target_answer").is_null()) {
    const json& v = s.at("target_answer");
    if (!v.is_number_integer()) throw ConfigError(s.field("target_answer"), "expected an integer");
    k.target_answer = v.get<std::int64_t>();
  }
  if (s.has("subdomains")) {
    const json& v = s.at("subdomains");
    if (!v.is_array()) throw ConfigError(s.field("subdomains"), "expected an array of strings");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) {
        throw ConfigError(s.field("subdomains") + "[" + std::to_string(i) + "]", "expected a string");
      }
      k.subdomains.push_back(v[i].get<std::string>());
    }
  }
  s.read("with_reasoning", k.with_reasoning);
  s.read("min_length", k.min_length);
  s.read("max_length", k.max_length);
  s.read("num_required", k.num_required);
  s.read("num_forbidden", k.num_forbidden);
  s.read("min_tests", k.min_tests);
  s.read("max_tests", k.max_tests);
  s.finish();
  // The generator owns the knob rules; a one-problem dry run surfaces them.
  try {
    generate_problems(kind, 1, k, 0);
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
  return k;
}

std::array<DifficultyKnobs, 3> parse_kind_knobs(const json& j, const std::string& path) {
  Section s(j, path);
  std::array<DifficultyKnobs, 3> out;
  for (TaskKind kind : kAllTaskKinds) {
    const std::string name(to_string(kind));
    if (s.has(name)) out[index_of(kind)] = parse_knobs(s.at(name), s.field(name), kind);
  }
  s.finish();
  return out;
}

DataConfig parse_data(const json& j, const std::string& path) {
  Section s(j, path);
  DataConfig d;
  s.read("train_per_kind", d.train_per_kind);
  s.read("heldout_per_kind", d.heldout_per_kind);
  s.read("stage2_per_kind", d.stage2_per_kind);
  if (s.has("knobs")) d.knobs = parse_kind_knobs(s.at("knobs"), s.field("knobs"));
  if (s.has("stage2_knobs")) d.stage2_knobs = parse_kind_knobs(s.at("stage2_knobs"), s.field("stage2_knobs"));
  s.finish();
  check(d.train_per_kind >= 1, s.field("train_per_kind"), "must be >= 1");
  check(d.heldout_per_kind >= 1, s.field("heldout_per_kind"), "must be >= 1");
  check(d.stage2_per_kind >= 0, s.field("stage2_per_kind"), "must be >= 0");
  return d;
}

std::vector<CurriculumStage> parse_stages(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a nonempty array");
  std::vector<CurriculumStage> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    Section s(j[i], p);
    CurriculumStage st;
    s.read("max_len", st.max_len);
    s.read("data_stage", st.data_stage);
    s.finish();
    check(st.max_len >= 1, s.field("max_len"), "must be >= 1");
    check(st.data_stage == 1 || st.data_stage == 2, s.field("data_stage"), "must be 1 or 2");
    out.push_back(st);
  }
  return out;
}

SftConfig parse_sft(const json& j, const std::string& path) {
  Section s(j, path);
  SftConfig c;
  c.options.stages = {{16, 1}, {32, 1}, {64, 2}};
  if (s.has("stages")) c.options.stages = parse_stages(s.at("stages"), s.field("stages"));
  s.read("steps_per_stage", c.options.steps_per_stage);
  s.read("learning_rate", c.options.learning_rate);
  s.read("beta1", c.options.beta1);
  s.read("beta2", c.options.beta2);
  s.read("adam_eps", c.options.adam_eps);
  s.read("batch_size", c.options.batch_size);
  s.read("chunk_size", c.options.chunk_size);
  s.read("regenerate_attempts", c.regenerate_attempts);
  s.read("max_new", c.max_new);
  s.read("temperature", c.temperature);
  s.finish();
  check(c.options.steps_per_stage >= 0, s.field("steps_per_stage"), "must be >= 0");
  check(std::isfinite(c.options.learning_rate) && c.options.learning_rate > 0,
        s.field("learning_rate"), "must be a positive real");
  check(c.options.beta1 >= 0 && c.options.beta1 < 1, s.field("beta1"), "must be in [0, 1)");
  check(c.options.beta2 >= 0 && c.options.beta2 < 1, s.field("beta2"), "must be in [0, 1)");
  check(c.options.adam_eps > 0, s.field("adam_eps"), "must be > 0");
  check(c.options.batch_size >= 0, s.field("batch_size"), "must be >= 0");
  check(c.options.chunk_size >= 1, s.field("chunk_size"), "must be >= 1");
  check(c.regenerate_attempts >= 0, s.field("regenerate_attempts"), "must be >= 0");
  check(c.max_new >= 0, s.field("max_new"), "must be >= 0");
  check(std::isfinite(c.temperature) && c.temperature > 0, s.field("temperature"),
        "must be a positive real");
  return c;
}

FilterConfig parse_filter(const json& j, const std::string& path) {
  Section s(j, path);
  FilterConfig c;
  if (s.has("band")) {
    Section b(s.at("band"), s.field("band"));
    b.read("low", c.band.low);
    b.read("high", c.band.high);
    b.read("low_inclusive", c.band.low_inclusive);
    b.read("high_inclusive", c.band.high_inclusive);
    b.finish();
    try {
      c.band.validate();
    } catch (const std::invalid_argument&) {
      throw ConfigError(s.field("band"), "require 0 <= low <= high <= 1");
    }
  }
  s.read("n", c.options.n);
  s.read("temperature", c.options.temperature);
  s.read("max_new", c.options.max_new);
  s.read_optional("top_k", c.options.top_k);
  s.read_optional("prefilter_bound", c.prefilter_bound);
  s.read("stratify", c.stratify);
  s.finish();
  check(c.options.n >= 1, s.field("n"), "must be >= 1");
  check(std::isfinite(c.options.temperature) && c.options.temperature > 0,
        s.field("temperature"), "must be a positive real");
  check(c.options.max_new >= 0, s.field("max_new"), "must be >= 0");
  check(!c.options.top_k || (*c.options.top_k >= 1 && *c.options.top_k <= c.options.n),
        s.field("top_k"), "must be in [1, n]");
  check(!c.prefilter_bound || (*c.prefilter_bound > 0 && *c.prefilter_bound <= 1),
        s.field("prefilter_bound"), "must be in (0, 1]");
  return c;
}

void parse_rl(const json& j, const std::string& path, TrainConfig& c, int& eval_every) {
  Section s(j, path);
  s.read("group_size", c.group_size);
  s.read("inner_steps", c.inner_steps);
  s.read("learning_rate", c.learning_rate);
  if (s.has("clip")) {
    Section cl(s.at("clip"), s.field("clip"));
    cl.read("eps_low", c.clip.eps_low);
    cl.read("eps_high", c.clip.eps_high);
    cl.finish();
  }
  std::string mode(to_string(c.mode));
  s.read("mode", mode);
  try {
    c.mode = ratio_mode_from_string(mode);
  } catch (const std::invalid_argument&) {
    throw ConfigError(s.field("mode"), "expected \"gspo\" or \"grpo\"");
  }
  s.read("nominal_group_size", c.nominal_group_size);
  if (s.has("task_mixture")) {
    Section m(s.at("task_mixture"), s.field("task_mixture"));
    for (TaskKind kind : kAllTaskKinds) {
      m.read(std::string(to_string(kind)), c.task_mixture[index_of(kind)]);
    }
    m.finish();
  }
  s.read("batch_size", c.batch_size);
  s.read("temperature", c.temperature);
  s.read("max_new", c.max_new);
  s.read("std_floor", c.std_floor);
  s.read("outer_iterations", c.outer_iterations);
  s.read("record_wall_clock", c.record_wall_clock);
  s.read("eval_every", eval_every);
  s.finish();
  check(eval_every >= 0, s.field("eval_every"), "must be >= 0");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    const auto colon = what.find(':');
    std::string name = what.substr(0, colon);
    if (name == "clip") {
      const bool low_bad = !(c.clip.eps_low > 0.0) || c.clip.eps_low > c.clip.eps_high;
      name = low_bad ? "clip.eps_low" : "clip.eps_high";
    }
    const std::string message =
        colon == std::string::npos ? what : what.substr(colon + 2);
    throw ConfigError(s.field(name), message);
  }
}

EvalConfig parse_eval(const json& j, const std::string& path) {
  Section s(j, path);
  EvalConfig c;
  s.read("n", c.n);
  s.read("max_new", c.max_new);
  s.read("temperature", c.temperature);
  s.finish();
  check(c.n >= 1, s.field("n"), "must be >= 1");
  check(c.max_new >= 0, s.field("max_new"), "must be >= 0");
  check(std::isfinite(c.temperature) && c.temperature > 0, s.field("temperature"),
        "must be a positive real");
  return c;
}

json knobs_json(const DifficultyKnobs& k) {
  json j;
  j["depth"] = k.depth;
  j["max_operand"] = k.max_operand;
  j["target_answer"] = k.target_answer ? json(*k.target_answer) : json(nullptr);
  j["subdomains"] = k.subdomains;
  j["with_reasoning"] = k.with_reasoning;
  j["min_length"] = k.min_length;
  j["max_length"] = k.max_length;
  j["num_required"] = k.num_required;
  j["num_forbidden"] = k.num_forbidden;
  j["min_tests"] = k.min_tests;
  j["max_tests"] = k.max_tests;
  return j;
}

json kind_knobs_json(const std::array<DifficultyKnobs, 3>& knobs) {
  json j;
  for (TaskKind kind : kAllTaskKinds) {
    j[std::string(to_string(kind))] = knobs_json(knobs[index_of(kind)]);
  }
  return j;
}

json stages_json(const std::vector<CurriculumStage>& stages) {
  json j = json::array();
  for (const auto& s : stages) j.push_back({{"max_len", s.max_len}, {"data_stage", s.data_stage}});
  return j;
}

}  // namespace

Config parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  Section s(root, "");
  Config c;
  if (!s.has("schema_version")) throw ConfigError("schema_version", "missing required field");
  s.read("schema_version", c.schema_version);
  check(c.schema_version == kConfigSchemaVersion, "schema_version",
        "unsupported version (expected " + std::to_string(kConfigSchemaVersion) + ")");
  s.read("seed", c.seed);
  c.policy = parse_policy(s.has("policy") ? s.at("policy") : json::object(), "policy");
  c.data = parse_data(s.has("data") ? s.at("data") : json::object(), "data");
  c.sft = parse_sft(s.has("sft") ? s.at("sft") : json::object(), "sft");
  c.filter = parse_filter(s.has("filter") ? s.at("filter") : json::object(), "filter");
  parse_rl(s.has("rl") ? s.at("rl") : json::object(), "rl", c.rl, c.eval_every);
  c.eval = parse_eval(s.has("eval") ? s.at("eval") : json::object(), "eval");
  s.finish();
  c.rl.seed = c.seed;
  c.rl.curriculum_stages = c.sft.options.stages;
  c.sft.options.seed = c.seed;
  return c;
}

std::string config_to_json(const Config& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["policy"] = {{"kind", std::string(to_string(c.policy.kind))},
                 {"max_seq_len", c.policy.max_seq_len},
                 {"embed_dim", c.policy.embed_dim},
                 {"num_layers", c.policy.num_layers},
                 {"num_heads", c.policy.num_heads},
                 {"ffn_dim", c.policy.ffn_dim}};
  j["data"] = {{"train_per_kind", c.data.train_per_kind},
               {"heldout_per_kind", c.data.heldout_per_kind},
               {"stage2_per_kind", c.data.stage2_per_kind},
               {"knobs", kind_knobs_json(c.data.knobs)},
               {"stage2_knobs", kind_knobs_json(c.data.stage2_knobs)}};
  const SftOptions& so = c.sft.options;
  j["sft"] = {{"stages", stages_json(so.stages)},
              {"steps_per_stage", so.steps_per_stage},
              {"learning_rate", so.learning_rate},
              {"beta1", so.beta1},
              {"beta2", so.beta2},
              {"adam_eps", so.adam_eps},
              {"batch_size", so.batch_size},
              {"chunk_size", so.chunk_size},
              {"regenerate_attempts", c.sft.regenerate_attempts},
              {"max_new", c.sft.max_new},
              {"temperature", c.sft.temperature}};
  j["filter"] = {{"band",
                  {{"low", c.filter.band.low},
                   {"high", c.filter.band.high},
                   {"low_inclusive", c.filter.band.low_inclusive},
                   {"high_inclusive", c.filter.band.high_inclusive}}},
                 {"n", c.filter.options.n},
                 {"temperature", c.filter.options.temperature},
                 {"max_new", c.filter.options.max_new},
                 {"top_k", c.filter.options.top_k ? json(*c.filter.options.top_k) : json(nullptr)},
                 {"prefilter_bound", c.filter.prefilter_bound ? json(*c.filter.prefilter_bound) : json(nullptr)},
                 {"stratify", c.filter.stratify}};
  const TrainConfig& r = c.rl;
  json mixture;
  for (TaskKind kind : kAllTaskKinds) mixture[std::string(to_string(kind))] = r.task_mixture[index_of(kind)];
  j["rl"] = {{"group_size", r.group_size},
             {"inner_steps", r.inner_steps},
             {"learning_rate", r.learning_rate},
             {"clip", {{"eps_low", r.clip.eps_low}, {"eps_high", r.clip.eps_high}}},
             {"mode", std::string(to_string(r.mode))},
             {"nominal_group_size", r.nominal_group_size},
             {"task_mixture", mixture},
             {"batch_size", r.batch_size},
             {"temperature", r.temperature},
             {"max_new", r.max_new},
             {"std_floor", r.std_floor},
             {"outer_iterations", r.outer_iterations},
             {"record_wall_clock", r.record_wall_clock},
             {"eval_every", c.eval_every}};
  j["eval"] = {{"n", c.eval.n}, {"max_new", c.eval.max_new}, {"temperature", c.eval.temperature}};
  return j.dump(2);
}

}  // namespace grlab::cli
