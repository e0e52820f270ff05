#include "grlab/cli/app.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <nlohmann/json.hpp>

#include "grlab/checkpoint.hpp"
#include "grlab/cli/config.hpp"
#include "grlab/cli/report.hpp"
#include "grlab/data_filter.hpp"
#include "grlab/io.hpp"
#include "grlab/rng.hpp"
#include "grlab/trainer.hpp"

#ifndef GRLAB_TOOL_VERSION
#define GRLAB_TOOL_VERSION "0.0.0"
#endif

namespace grlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed-derivation labels, one per consumer of randomness.
enum SeedSlot : std::uint64_t {
  kSeedTrainPool = 1,
  kSeedHeldout = 2,
  kSeedStage2Pool = 3,
  kSeedInit = 4,
  kSeedSftBatches = 5,
  kSeedRegenerate = 6,
  kSeedFilter = 7,
  kSeedRl = 8,
  kSeedEval = 9,
};

namespace path {
std::string train_pool(TaskKind k) { return "data/train_" + std::string(to_string(k)) + ".jsonl"; }
const std::string kHeldout = "data/heldout.jsonl";
const std::string kStage2 = "data/stage2.jsonl";
const std::string kInitPolicy = "sft/init.grlb";
const std::string kSftPolicy = "sft/policy.grlb";
const std::string kSftReport = "sft/report.jsonl";
std::string retained(TaskKind k) { return "filter/retained_" + std::string(to_string(k)) + ".jsonl"; }
const std::string kFilterReport = "filter/report.jsonl";
const std::string kMetrics = "rl/metrics.jsonl";
const std::string kRlPolicy = "rl/policy.grlb";
const std::string kCheckpointSidecar = "rl/checkpoints/config.json";
const std::string kEvalResults = "eval/results.json";
}  // namespace path

struct Workspace {
  Config config;
  std::string config_json;
  fs::path root;
  std::ostream* out = nullptr;

  fs::path at(const std::string& rel) const { return root / rel; }
};

// Inputs and outputs of one stage, with their digests, in recording order.
class Manifest {
 public:
  Manifest(const Workspace& ws, std::string command)
      : ws_(ws), command_(std::move(command)) {}

  std::string read_input(const std::string& rel) {
    const fs::path p = ws_.at(rel);
    if (!fs::exists(p)) {
      throw IoError("missing input file " + p.string());
    }
    std::string data = read_text_file(p);
    inputs_.push_back({{"path", rel}, {"sha256", sha256_hex(data)}});
    return data;
  }

  // For inputs addressed outside the workspace, such as --checkpoint.
  std::string read_external(const fs::path& p) {
    if (!fs::exists(p)) {
      throw IoError("missing input file " + p.string());
    }
    std::string data = read_text_file(p);
    inputs_.push_back({{"path", p.string()}, {"sha256", sha256_hex(data)}});
    return data;
  }

  void write_output(const std::string& rel, std::string_view data) {
    write_file_atomic(ws_.at(rel), data);
    outputs_.push_back({{"path", rel}, {"sha256", sha256_hex(data)}});
  }

  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }

  std::string finish() {
    json j;
    j["tool"] = "grlab";
    j["tool_version"] = GRLAB_TOOL_VERSION;
    j["command"] = command_;
    j["config"] = json::parse(ws_.config_json);
    j["config_sha256"] = sha256_hex(ws_.config_json);
    j["seeds"] = seeds_;
    j["seeds"]["master"] = ws_.config.seed;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    const std::string rel = "manifests/" + command_ + ".json";
    const std::string text = j.dump(2) + "\n";
    write_file_atomic(ws_.at(rel), text);
    return rel;
  }

 private:
  const Workspace& ws_;
  std::string command_;
  json seeds_ = json::object();
  json inputs_ = json::array();
  json outputs_ = json::array();
};

std::string encode_to_string(const PolicyParams& params) {
  const auto bytes = encode_checkpoint(params);
  return {bytes.begin(), bytes.end()};
}

PolicyParams decode_from_string(const std::string& data) {
  return decode_checkpoint(std::vector<std::uint8_t>(data.begin(), data.end()));
}

std::vector<Problem> parse_pool(const std::string& data, const std::string& rel) {
  try {
    return pool_from_jsonl(data);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(rel + ": " + e.what());
  }
}

std::uint64_t seed_for(const Workspace& ws, std::initializer_list<std::uint64_t> path) {
  return derive_seed(ws.config.seed, path);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---- stages ----

void cmd_gen_data(const Workspace& ws) {
  Manifest m(ws, "gen-data");
  const DataConfig& d = ws.config.data;
  std::vector<Problem> heldout, stage2;
  for (TaskKind kind : kAllTaskKinds) {
    const std::uint64_t k = index_of(kind);
    const DifficultyKnobs& knobs = d.knobs[k];
    const auto train_seed = seed_for(ws, {kSeedTrainPool, k});
    const auto train = generate_problems(kind, d.train_per_kind, knobs, train_seed);
    m.write_output(path::train_pool(kind), pool_to_jsonl(train));
    m.seed("train_" + std::string(to_string(kind)), train_seed);

    const auto held_seed = seed_for(ws, {kSeedHeldout, k});
    const auto held = generate_problems(kind, d.heldout_per_kind, knobs, held_seed);
    heldout.insert(heldout.end(), held.begin(), held.end());
    m.seed("heldout_" + std::string(to_string(kind)), held_seed);

    if (d.stage2_per_kind > 0) {
      const auto s2_seed = seed_for(ws, {kSeedStage2Pool, k});
      const auto s2 = generate_problems(kind, d.stage2_per_kind, d.stage2_knobs[k], s2_seed);
      stage2.insert(stage2.end(), s2.begin(), s2.end());
      m.seed("stage2_" + std::string(to_string(kind)), s2_seed);
    }
  }
  m.write_output(path::kHeldout, pool_to_jsonl(heldout));
  m.write_output(path::kStage2, pool_to_jsonl(stage2));
  m.finish();
  *ws.out << "gen-data: " << d.train_per_kind << " train, " << d.heldout_per_kind
          << " heldout, " << d.stage2_per_kind << " stage-2 problems per kind\n";
}

void cmd_sft(const Workspace& ws) {
  Manifest m(ws, "sft");
  std::vector<Problem> train;
  for (TaskKind kind : kAllTaskKinds) {
    const auto rel = path::train_pool(kind);
    const auto pool = parse_pool(m.read_input(rel), rel);
    train.insert(train.end(), pool.begin(), pool.end());
  }
  const auto stage2 = parse_pool(m.read_input(path::kStage2), path::kStage2);

  const SftConfig& sc = ws.config.sft;
  const auto init_seed = seed_for(ws, {kSeedInit});
  const PolicyParams init = init_policy(ws.config.policy, init_seed);
  m.seed("init", init_seed);

  std::vector<Trace> traces = reference_traces(train, 1);
  const auto s2_refs = reference_traces(stage2, 2);
  traces.insert(traces.end(), s2_refs.begin(), s2_refs.end());

  SftOptions options = sc.options;
  options.seed = seed_for(ws, {kSeedSftBatches});
  m.seed("sft_batches", options.seed);
  std::size_t regenerated = 0, omitted = 0;
  if (sc.regenerate_attempts > 0 && !stage2.empty()) {
    const auto regen_seed = seed_for(ws, {kSeedRegenerate});
    m.seed("regenerate", regen_seed);
    const auto first_s2 = std::find_if(options.stages.begin(), options.stages.end(),
                                       [](const CurriculumStage& s) { return s.data_stage == 2; });
    const int trigger = static_cast<int>(first_s2 - options.stages.begin());
    options.extra_traces = [&](int stage, const PolicyParams& params) {
      if (stage != trigger) return std::vector<Trace>{};
      RegenerateResult r = regenerate_traces(params, stage2, sc.regenerate_attempts, regen_seed,
                                             sc.max_new, sc.temperature, 2);
      regenerated = r.traces.size();
      omitted = r.omitted;
      return std::move(r.traces);
    };
  }

  const SftResult result = sft_train(init, traces, options);
  std::string report;
  for (const auto& s : result.stages) {
    json j;
    j["stage"] = s.stage;
    j["max_len"] = s.max_len;
    j["data_stage"] = s.data_stage;
    j["eligible"] = s.eligible;
    j["excluded_too_long"] = s.excluded_too_long;
    j["loss_before"] = s.loss_before;
    j["loss_after"] = s.loss_after;
    j["step_losses"] = s.step_losses;
    report += j.dump() + "\n";
    *ws.out << "sft stage " << s.stage << " (max_len " << s.max_len << ", data " << s.data_stage
            << "): " << s.eligible << " traces, loss " << fmt(s.loss_before) << " -> "
            << fmt(s.loss_after) << "\n";
  }
  if (sc.regenerate_attempts > 0) {
    json j;
    j["regenerated"] = regenerated;
    j["regenerate_omitted"] = omitted;
    report += j.dump() + "\n";
    *ws.out << "sft regenerated " << regenerated << " traces, omitted " << omitted << "\n";
  }
  m.write_output(path::kInitPolicy, encode_to_string(init));
  m.write_output(path::kSftPolicy, encode_to_string(result.params));
  m.write_output(path::kSftReport, report);
  m.finish();
}

void cmd_filter(const Workspace& ws) {
  Manifest m(ws, "filter");
  const PolicyParams params = decode_from_string(m.read_input(path::kSftPolicy));
  const FilterConfig& fc = ws.config.filter;
  std::vector<FilterRecord> records;
  for (TaskKind kind : kAllTaskKinds) {
    const std::uint64_t k = index_of(kind);
    const auto rel = path::train_pool(kind);
    std::vector<Problem> pool = parse_pool(m.read_input(rel), rel);
    std::size_t missing = 0;
    if (fc.prefilter_bound) {
      PrefilterResult pre = prefilter_by_metadata(pool, *fc.prefilter_bound);
      missing = pre.missing_metadata;
      pool = std::move(pre.kept);
    }
    if (fc.stratify && !pool.empty()) {
      pool = stratified_balance(pool, seed_for(ws, {kSeedFilter, k, 1}));
    }
    std::vector<Problem> retained;
    if (!pool.empty()) {
      const auto filter_seed = seed_for(ws, {kSeedFilter, k});
      m.seed("filter_" + std::string(to_string(kind)), filter_seed);
      FilterResult r = filter_pool(params, pool, fc.band, fc.options, filter_seed);
      retained = std::move(r.retained);
      records.insert(records.end(), r.records.begin(), r.records.end());
    }
    m.write_output(path::retained(kind), pool_to_jsonl(retained));
    *ws.out << "filter " << to_string(kind) << ": " << retained.size() << " of " << pool.size()
            << " retained";
    if (missing > 0) *ws.out << " (" << missing << " dropped for missing metadata)";
    *ws.out << "\n";
  }
  m.write_output(path::kFilterReport, filter_report_to_jsonl(records));
  m.finish();
}

void cmd_rl(const Workspace& ws) {
  Manifest m(ws, "rl");
  const PolicyParams initial = decode_from_string(m.read_input(path::kSftPolicy));
  TaskPools pools;
  for (TaskKind kind : kAllTaskKinds) {
    const auto rel = path::retained(kind);
    pools[index_of(kind)] = parse_pool(m.read_input(rel), rel);
  }
  const auto heldout = parse_pool(m.read_input(path::kHeldout), path::kHeldout);

  TrainConfig config = ws.config.rl;
  config.seed = seed_for(ws, {kSeedRl});
  m.seed("rl", config.seed);

  std::string metrics;
  std::vector<std::pair<std::string, std::string>> checkpoints;
  RunCallbacks cb;
  cb.on_metrics = [&](const MetricsRecord& r) { metrics += to_json_line(r) + "\n"; };
  cb.on_eval = [&](const EvalRecord& r) {
    metrics += to_json_line(r) + "\n";
    *ws.out << "rl eval @" << r.outer << ": overall " << fmt(r.overall) << "\n";
  };
  cb.on_checkpoint = [&](int outer, const PolicyParams& p) {
    char name[64];
    std::snprintf(name, sizeof(name), "rl/checkpoints/iter_%04d.grlb", outer + 1);
    m.write_output(name, encode_to_string(p));
  };
  RunOptions options;
  options.heldout = heldout;
  options.eval_every = ws.config.eval_every;
  const RunResult result = run(config, initial, pools, cb, options);

  m.write_output(path::kCheckpointSidecar, ws.config_json);
  m.write_output(path::kMetrics, metrics);
  m.write_output(path::kRlPolicy, encode_to_string(result.params));
  m.finish();
  *ws.out << "rl: " << config.outer_iterations << " outer iterations, "
          << result.flagged_iterations << " flagged\n";
}

void cmd_eval(const Workspace& ws, const std::string& checkpoint) {
  Manifest m(ws, "eval");
  const std::string data =
      checkpoint.empty() ? m.read_input(path::kRlPolicy) : m.read_external(checkpoint);
  const PolicyParams params = decode_from_string(data);
  const auto heldout = parse_pool(m.read_input(path::kHeldout), path::kHeldout);
  const EvalConfig& ec = ws.config.eval;
  const auto eval_seed = seed_for(ws, {kSeedEval});
  m.seed("eval", eval_seed);
  const EvalResult r = evaluate(params, heldout, ec.n, eval_seed, ec.max_new, ec.temperature);
  json j;
  j["checkpoint"] = checkpoint.empty() ? path::kRlPolicy : checkpoint;
  j["n"] = ec.n;
  j["overall"] = r.overall;
  for (TaskKind kind : kAllTaskKinds) {
    const std::size_t k = index_of(kind);
    const std::string name(to_string(kind));
    j["pass_at_1"][name] = r.pass_at_1[k] ? json(*r.pass_at_1[k]) : json(nullptr);
    j["counts"][name] = r.counts[k];
  }
  m.write_output(path::kEvalResults, j.dump(2) + "\n");
  m.finish();
  *ws.out << "eval: overall pass@1 " << fmt(r.overall);
  for (TaskKind kind : kAllTaskKinds) {
    const auto& v = r.pass_at_1[index_of(kind)];
    *ws.out << ", " << to_string(kind) << " " << (v ? fmt(*v) : std::string("-"));
  }
  *ws.out << "\n";
}

void cmd_pipeline(const Workspace& ws) {
  cmd_gen_data(ws);
  cmd_sft(ws);
  cmd_filter(ws);
  cmd_rl(ws);
  cmd_eval(ws, "");
  json j;
  j["tool"] = "grlab";
  j["tool_version"] = GRLAB_TOOL_VERSION;
  j["command"] = "pipeline";
  j["config_sha256"] = sha256_hex(ws.config_json);
  j["stages"] = json::array();
  for (const char* stage : {"gen-data", "sft", "filter", "rl", "eval"}) {
    const std::string rel = std::string("manifests/") + stage + ".json";
    j["stages"].push_back({{"path", rel}, {"sha256", sha256_file(ws.at(rel))}});
  }
  write_file_atomic(ws.at("manifests/pipeline.json"), j.dump(2) + "\n");
}

int cmd_report(const std::vector<std::string>& files, const fs::path& out_dir, std::ostream& out) {
  std::vector<MetricsSource> sources;
  for (const auto& f : files) {
    const fs::path p(f);
    if (!fs::exists(p)) {
      throw IoError("missing input file " + f);
    }
    std::string label = p.stem().string();
    const bool clash = std::any_of(sources.begin(), sources.end(),
                                   [&](const MetricsSource& s) { return s.label == label; });
    if (clash) label = f;
    sources.push_back({label, read_text_file(p)});
  }
  const Report r = build_report(sources);
  write_file_atomic(out_dir / "rewards.csv", r.rewards_csv);
  write_file_atomic(out_dir / "pass_at_1.csv", r.pass_at_1_csv);
  write_file_atomic(out_dir / "drift.csv", r.drift_csv);
  write_file_atomic(out_dir / "summary.txt", r.summary_text);
  out << r.summary_text;
  return r.warnings.empty() ? kExitOk : kExitWarnings;
}

void print_error(std::ostream& err, const std::string& kind, int code,
                 const std::string& message, const std::string& field = {}) {
  json j;
  j["error"] = kind;
  j["exit_code"] = code;
  j["message"] = message;
  if (!field.empty()) j["field"] = field;
  err << j.dump() << "\n";
}

Workspace load_workspace(const std::string& config_path, const std::string& out_dir,
                         std::ostream& out) {
  if (!fs::exists(config_path)) {
    throw IoError("missing config file " + config_path);
  }
  Workspace ws;
  ws.config = parse_config(read_text_file(config_path));
  ws.config_json = config_to_json(ws.config);
  ws.root = out_dir;
  ws.out = &out;
  return ws;
}

}  // namespace

int run_app(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"grlab: deterministic group-relative RL laboratory", "grlab"};
  app.set_version_flag("--version", GRLAB_TOOL_VERSION);
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint;
  std::vector<std::string> metrics_files;
  const auto stage = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "JSON config file")->required();
    sub->add_option("-o,--out", out_dir, "Workspace directory for inputs and outputs")->required();
    return sub;
  };
  CLI::App* gen = stage("gen-data", "Generate train, heldout and stage-2 problem pools");
  CLI::App* sft = stage("sft", "Supervised fine-tuning over the length curriculum");
  CLI::App* filt = stage("filter", "Keep problems whose pass rate falls inside the band");
  CLI::App* rl = stage("rl", "Group-relative RL with trajectory reuse");
  CLI::App* ev = stage("eval", "Heldout pass@1 of a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate (default rl/policy.grlb)");
  CLI::App* pipe = stage("pipeline", "Run gen-data, sft, filter, rl and eval in order");
  CLI::App* rep = app.add_subcommand("report", "Summarize metrics streams as text and CSV");
  rep->add_option("-o,--out", out_dir, "Directory for the report files")->required();
  rep->add_option("metrics", metrics_files, "Metrics JSONL files")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << GRLAB_TOOL_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", kExitConfig, e.what());
    return kExitConfig;
  }

  try {
    if (rep->parsed()) {
      return cmd_report(metrics_files, out_dir, out);
    }
    const Workspace ws = load_workspace(config_path, out_dir, out);
    if (gen->parsed()) cmd_gen_data(ws);
    if (sft->parsed()) cmd_sft(ws);
    if (filt->parsed()) cmd_filter(ws);
    if (rl->parsed()) cmd_rl(ws);
    if (ev->parsed()) cmd_eval(ws, checkpoint);
    if (pipe->parsed()) cmd_pipeline(ws);
    return kExitOk;
  } catch (const ConfigError& e) {
    print_error(err, "config", kExitConfig, e.what(), e.field());
    return kExitConfig;
  } catch (const IoError& e) {
    print_error(err, "io", kExitIo, e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    print_error(err, "runtime", kExitRuntime, e.what());
    return kExitRuntime;
  }
}

}  // namespace grlab::cli
