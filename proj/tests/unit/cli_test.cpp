#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unistd.h>

#include "grlab/cli/app.hpp"
#include "grlab/cli/config.hpp"
#include "grlab/cli/report.hpp"
#include "grlab/io.hpp"
#include "grlab/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace grlab;
using namespace grlab::cli;

namespace {

struct AppRun {
  int code = 0;
  std::string out;
  std::string err;
};

AppRun app(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  AppRun r;
  r.code = run_app(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() /
               ("grlab_cli_" + std::to_string(::getpid()) + "_" + info->name() + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Relative path -> contents for every regular file under root.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      files[fs::relative(e.path(), root).string()] = read_text_file(e.path());
    }
  }
  return files;
}

std::string write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  write_file_atomic(p, text);
  return p.string();
}

std::string fixture(const std::string& rel) {
  return read_text_file(fs::path(GRLAB_FIXTURE_DIR) / rel);
}

std::string field_of(const ConfigError& e) { return e.field(); }

std::string expect_config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return field_of(e);
  }
  ADD_FAILURE() << "no ConfigError for " << text;
  return {};
}

}  // namespace

// ---- config ----

TEST(CliConfig, MinimalConfigTakesDefaults) {
  const Config c = parse_config(R"({"schema_version": 1})");
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.policy.kind, PolicyKind::kTinyTransformer);
  EXPECT_EQ(c.rl.group_size, TrainConfig{}.group_size);
  EXPECT_EQ(c.rl.curriculum_stages, c.sft.options.stages);
}

TEST(CliConfig, UnknownFieldsAreRejectedWithTheirPath) {
  EXPECT_EQ(expect_config_error(R"({"schema_version": 1, "bogus": 3})"), "bogus");
  EXPECT_EQ(expect_config_error(R"({"schema_version": 1, "rl": {"clip": {"eps_mid": 0.1}}})"),
            "rl.clip.eps_mid");
  EXPECT_EQ(expect_config_error(
                R"({"schema_version": 1, "data": {"knobs": {"math": {"depht": 2}}}})"),
            "data.knobs.math.depht");
}

TEST(CliConfig, InvalidValuesNameTheField) {
  EXPECT_EQ(expect_config_error(R"({"seed": 1})"), "schema_version");
  EXPECT_EQ(expect_config_error(R"({"schema_version": 2})"), "schema_version");
  EXPECT_EQ(expect_config_error("{not json"), "<root>");
  EXPECT_EQ(expect_config_error(R"({"schema_version": 1, "rl": {"learning_rate": -0.5}})"),
            "rl.learning_rate");
  EXPECT_EQ(expect_config_error(R"({"schema_version": 1, "rl": {"group_size": 1.5}})"),
            "rl.group_size");
  EXPECT_EQ(expect_config_error(R"({"schema_version": 1, "rl": {"mode": "ppo"}})"), "rl.mode");
  EXPECT_EQ(expect_config_error(R"({"schema_version": 1, "policy": {"kind": "rnn"}})"),
            "policy.kind");
  EXPECT_EQ(expect_config_error(
                R"({"schema_version": 1, "filter": {"band": {"low": 0.8, "high": 0.2}}})"),
            "filter.band");
  EXPECT_EQ(expect_config_error(R"({"schema_version": 1, "sft": {"stages": []}})"),
            "sft.stages");
}

TEST(CliConfig, CanonicalFormRoundTrips) {
  const std::string smoke = read_text_file(GRLAB_SMOKE_CONFIG);
  const std::string once = config_to_json(parse_config(smoke));
  const std::string twice = config_to_json(parse_config(once));
  EXPECT_EQ(once, twice);
  const Config a = parse_config(smoke);
  const Config b = parse_config(once);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ(a.policy, b.policy);
  EXPECT_EQ(a.rl.learning_rate, b.rl.learning_rate);
  EXPECT_EQ(a.sft.options.stages, b.sft.options.stages);
  EXPECT_EQ(a.filter.band.low_inclusive, b.filter.band.low_inclusive);
}

// ---- exit codes ----

TEST(CliExit, NegativeLearningRateIsAConfigError) {
  const fs::path dir = scratch_dir("cfg");
  const auto cfg = write_config(dir, R"({"schema_version": 1, "rl": {"learning_rate": -1}})");
  const AppRun r = app({"gen-data", "--config", cfg, "--out", (dir / "ws").string()});
  EXPECT_EQ(r.code, kExitConfig);
  const json e = json::parse(r.err);
  EXPECT_EQ(e.at("error"), "config");
  EXPECT_EQ(e.at("field"), "rl.learning_rate");
  EXPECT_FALSE(fs::exists(dir / "ws"));
}

TEST(CliExit, MissingInputsAreIoErrors) {
  const fs::path dir = scratch_dir("io");
  const AppRun no_config =
      app({"gen-data", "--config", (dir / "absent.json").string(), "--out", dir.string()});
  EXPECT_EQ(no_config.code, kExitIo);

  const auto cfg = write_config(dir, read_text_file(GRLAB_SMOKE_CONFIG));
  const AppRun r = app({"sft", "--config", cfg, "--out", (dir / "ws").string()});
  EXPECT_EQ(r.code, kExitIo);
  const json e = json::parse(r.err);
  EXPECT_EQ(e.at("error"), "io");
  EXPECT_NE(e.at("message").get<std::string>().find("train_math.jsonl"), std::string::npos);
}

TEST(CliExit, UsageErrorsAndVersion) {
  EXPECT_EQ(app({}).code, kExitConfig);
  EXPECT_EQ(app({"train"}).code, kExitConfig);
  EXPECT_EQ(app({"rl", "--out", "x"}).code, kExitConfig);
  const AppRun v = app({"--version"});
  EXPECT_EQ(v.code, kExitOk);
  EXPECT_EQ(v.out, "0.1.0\n");
}

TEST(CliExit, CorruptCheckpointIsARuntimeError) {
  const fs::path dir = scratch_dir("rt");
  const auto cfg = write_config(dir, read_text_file(GRLAB_SMOKE_CONFIG));
  const std::string ws = (dir / "ws").string();
  ASSERT_EQ(app({"gen-data", "--config", cfg, "--out", ws}).code, kExitOk);
  write_file_atomic(dir / "bad.grlb", "not a checkpoint");
  const AppRun r = app({"eval", "--config", cfg, "--out", ws, "--checkpoint",
                        (dir / "bad.grlb").string()});
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_EQ(json::parse(r.err).at("error"), "runtime");
}

// ---- report ----

TEST(CliReport, GoldenFixture) {
  const Report r = build_report({{"run_a", fixture("report/run_a.jsonl")}});
  EXPECT_TRUE(r.warnings.empty());
  EXPECT_EQ(r.rewards_csv, fixture("report/rewards.csv"));
  EXPECT_EQ(r.pass_at_1_csv, fixture("report/pass_at_1.csv"));
  EXPECT_EQ(r.drift_csv, fixture("report/drift.csv"));
}

TEST(CliReport, CommandWritesFilesAndLabelsByStem) {
  const fs::path dir = scratch_dir("rep");
  const AppRun r = app({"report", "--out", (dir / "out").string(),
                        std::string(GRLAB_FIXTURE_DIR) + "/report/run_a.jsonl"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_EQ(read_text_file(dir / "out/rewards.csv"), fixture("report/rewards.csv"));
  EXPECT_EQ(read_text_file(dir / "out/drift.csv"), fixture("report/drift.csv"));
  EXPECT_EQ(read_text_file(dir / "out/summary.txt"), r.out);
  EXPECT_NE(r.out.find("== run_a =="), std::string::npos);
  EXPECT_NE(r.out.find("warnings: 0"), std::string::npos);
}

TEST(CliReport, EmptyAndCorruptInputsWarn) {
  const fs::path dir = scratch_dir("warn");
  write_file_atomic(dir / "empty.jsonl", "");
  const std::string good = fixture("report/run_a.jsonl");
  write_file_atomic(dir / "torn.jsonl", good + "{\"type\":\"train\",\"outer\":");
  const AppRun r = app({"report", "--out", (dir / "out").string(),
                        (dir / "empty.jsonl").string(), (dir / "torn.jsonl").string()});
  EXPECT_EQ(r.code, kExitWarnings);
  EXPECT_NE(r.out.find("empty: no records"), std::string::npos);
  EXPECT_NE(r.out.find("torn: line 8: corrupt record skipped"), std::string::npos);
  // The torn stream still contributes its intact records.
  EXPECT_NE(read_text_file(dir / "out/rewards.csv").find("torn,1,0.750000"), std::string::npos);

  EXPECT_EQ(app({"report", "--out", (dir / "o2").string(), (dir / "nope.jsonl").string()}).code,
            kExitIo);
}

// ---- pipeline ----

TEST(CliPipeline, DeterministicAcrossRunsAndWorkerCounts) {
  const fs::path dir = scratch_dir("pipe");
  const auto cfg = write_config(dir, read_text_file(GRLAB_SMOKE_CONFIG));
  set_worker_count(1);
  ASSERT_EQ(app({"pipeline", "--config", cfg, "--out", (dir / "a").string()}).code, kExitOk);
  set_worker_count(3);
  ASSERT_EQ(app({"pipeline", "--config", cfg, "--out", (dir / "b").string()}).code, kExitOk);
  set_worker_count(0);
  const auto a = snapshot(dir / "a");
  const auto b = snapshot(dir / "b");
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a.size(), b.size());
  for (const auto& [rel, data] : a) {
    ASSERT_TRUE(b.count(rel)) << rel;
    EXPECT_EQ(data, b.at(rel)) << rel;
  }
  for (const char* rel : {"data/heldout.jsonl", "sft/policy.grlb", "filter/report.jsonl",
                          "rl/metrics.jsonl", "rl/policy.grlb", "eval/results.json",
                          "manifests/pipeline.json"}) {
    EXPECT_TRUE(a.count(rel)) << rel;
  }
}

TEST(CliPipeline, ManifestsRecordDigestsAndConfig) {
  const fs::path dir = scratch_dir("man");
  const auto cfg = write_config(dir, read_text_file(GRLAB_SMOKE_CONFIG));
  const fs::path ws = dir / "ws";
  ASSERT_EQ(app({"pipeline", "--config", cfg, "--out", ws.string()}).code, kExitOk);
  const std::string canonical = config_to_json(parse_config(read_text_file(cfg)));
  for (const char* stage : {"gen-data", "sft", "filter", "rl", "eval"}) {
    const json m = json::parse(read_text_file(ws / "manifests" / (std::string(stage) + ".json")));
    EXPECT_EQ(m.at("command"), stage);
    EXPECT_EQ(m.at("config_sha256"), sha256_hex(canonical));
    EXPECT_EQ(m.at("config"), json::parse(canonical));
    EXPECT_EQ(m.at("seeds").at("master"), 7u);
    EXPECT_FALSE(m.at("outputs").empty()) << stage;
    for (const auto& io : {m.at("inputs"), m.at("outputs")}) {
      for (const auto& f : io) {
        EXPECT_EQ(f.at("sha256"), sha256_file(ws / f.at("path").get<std::string>()))
            << stage << " " << f.at("path");
      }
    }
  }
  const json rl = json::parse(read_text_file(ws / "manifests/rl.json"));
  EXPECT_EQ(rl.at("inputs").size(), 5u);
  EXPECT_EQ(read_text_file(ws / "rl/checkpoints/config.json"), canonical);
  EXPECT_TRUE(fs::exists(ws / "rl/checkpoints/iter_0004.grlb"));
}

TEST(CliPipeline, StagewiseExecutableMatchesInProcessPipeline) {
  const fs::path dir = scratch_dir("exe");
  const auto cfg = write_config(dir, read_text_file(GRLAB_SMOKE_CONFIG));
  ASSERT_EQ(app({"pipeline", "--config", cfg, "--out", (dir / "a").string()}).code, kExitOk);
  for (const char* stage : {"gen-data", "sft", "filter", "rl", "eval"}) {
    const std::string cmd = std::string(GRLAB_CLI_EXE) + " " + stage + " --config " + cfg +
                            " --out " + (dir / "b").string() + " > /dev/null";
    ASSERT_EQ(std::system(cmd.c_str()), 0) << stage;
  }
  auto a = snapshot(dir / "a");
  const auto b = snapshot(dir / "b");
  a.erase("manifests/pipeline.json");
  EXPECT_EQ(a, b);
}

TEST(CliPipeline, EvalCheckpointOverride) {
  const fs::path dir = scratch_dir("ck");
  const auto cfg = write_config(dir, read_text_file(GRLAB_SMOKE_CONFIG));
  const fs::path ws = dir / "ws";
  for (const char* stage : {"gen-data", "sft"}) {
    ASSERT_EQ(app({stage, "--config", cfg, "--out", ws.string()}).code, kExitOk);
  }
  const std::string ck = (ws / "sft/init.grlb").string();
  const AppRun r = app({"eval", "--config", cfg, "--out", ws.string(), "--checkpoint", ck});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json res = json::parse(read_text_file(ws / "eval/results.json"));
  EXPECT_EQ(res.at("checkpoint"), ck);
  EXPECT_EQ(res.at("counts").at("math"), 6u);
}
