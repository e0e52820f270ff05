#include "grlab/cli/report.hpp"

#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <variant>

#include "grlab/io.hpp"
#include "grlab/metrics.hpp"

namespace grlab::cli {

namespace {

constexpr const char* kTasks[3] = {"math", "code", "format"};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string padded(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

struct DriftAccumulator {
  std::size_t records = 0;
  double clipped = 0.0;
  double drift = 0.0;
};

struct RunTables {
  std::vector<MetricsRecord> train;
  std::vector<EvalRecord> evals;
};

}  // namespace

Report build_report(const std::vector<MetricsSource>& sources) {
  Report out;
  std::ostringstream rewards, pass, drift, text;
  rewards << "run,outer,math,code,format,all\n";
  pass << "run,task,initial,final,delta\n";
  drift << "run,inner,records,mean_fraction_clipped,mean_abs_log_ratio\n";

  for (const auto& src : sources) {
    RunTables run;
    const auto lines = split_lines(src.text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
      try {
        const StreamRecord rec = parse_stream_record(lines[i]);
        if (const auto* m = std::get_if<MetricsRecord>(&rec)) {
          run.train.push_back(*m);
        } else {
          run.evals.push_back(std::get<EvalRecord>(rec));
        }
      } catch (const std::invalid_argument&) {
        out.warnings.push_back(src.label + ": line " + std::to_string(i + 1) +
                               ": corrupt record skipped");
      }
    }
    if (run.train.empty() && run.evals.empty()) {
      out.warnings.push_back(src.label + ": no records");
    }

    text << "== " << src.label << " ==\n";
    text << "train records: " << run.train.size() << ", eval records: " << run.evals.size()
         << "\n\n";

    text << "mean reward by outer iteration\n";
    text << padded("outer", 8) << padded("math", 12) << padded("code", 12)
         << padded("format", 12) << "all\n";
    for (const auto& m : run.train) {
      if (m.inner != 0) continue;
      rewards << src.label << ',' << m.outer;
      text << padded(std::to_string(m.outer), 8);
      for (std::size_t k = 0; k < 3; ++k) {
        rewards << ',' << fmt(m.mean_reward[k]);
        text << padded(m.mean_reward[k] ? fmt(*m.mean_reward[k]) : "-", 12);
      }
      rewards << ',' << fmt(m.mean_reward_all) << '\n';
      text << fmt(m.mean_reward_all) << '\n';
    }
    text << '\n';

    text << "heldout pass@1\n";
    text << padded("task", 10) << padded("initial", 12) << padded("final", 12) << "delta\n";
    if (!run.evals.empty()) {
      const EvalRecord* first = &run.evals.front();
      const EvalRecord* last = &run.evals.front();
      for (const auto& e : run.evals) {
        if (e.outer < first->outer) first = &e;
        if (e.outer >= last->outer) last = &e;
      }
      for (std::size_t k = 0; k < 4; ++k) {
        const std::string task = k < 3 ? kTasks[k] : "overall";
        const std::optional<double> a = k < 3 ? first->pass_at_1[k] : first->overall;
        const std::optional<double> b = k < 3 ? last->pass_at_1[k] : last->overall;
        std::optional<double> d;
        if (a && b) d = *b - *a;
        pass << src.label << ',' << task << ',' << fmt(a) << ',' << fmt(b) << ',' << fmt(d)
             << '\n';
        text << padded(task, 10) << padded(a ? fmt(*a) : "-", 12)
             << padded(b ? fmt(*b) : "-", 12) << (d ? fmt(*d) : "-") << '\n';
      }
    }
    text << '\n';

    std::map<int, DriftAccumulator> by_inner;
    for (const auto& m : run.train) {
      auto& acc = by_inner[m.inner];
      ++acc.records;
      acc.clipped += m.fraction_clipped;
      acc.drift += m.mean_abs_log_ratio;
    }
    text << "clipping and drift by inner step\n";
    text << padded("inner", 8) << padded("records", 10) << padded("clipped", 12)
         << "|log ratio|\n";
    for (const auto& [inner, acc] : by_inner) {
      const double n = static_cast<double>(acc.records);
      drift << src.label << ',' << inner << ',' << acc.records << ',' << fmt(acc.clipped / n)
            << ',' << fmt(acc.drift / n) << '\n';
      text << padded(std::to_string(inner), 8) << padded(std::to_string(acc.records), 10)
           << padded(fmt(acc.clipped / n), 12) << fmt(acc.drift / n) << '\n';
    }
    text << '\n';
  }
  text << "warnings: " << out.warnings.size() << '\n';
  for (const auto& w : out.warnings) text << "  " << w << '\n';

  out.rewards_csv = rewards.str();
  out.pass_at_1_csv = pass.str();
  out.drift_csv = drift.str();
  out.summary_text = text.str();
  return out;
}

}  // namespace grlab::cli
