#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace grlab::cli {

struct MetricsSource {
  std::string label;
  std::string text;  // JSON Lines metrics stream
};

struct Report {
  // run,outer,math,code,format,all from the first inner step of each outer
  // iteration (rewards are fixed across inner steps).
  std::string rewards_csv;
  // run,task,initial,final,delta from the earliest and latest eval records.
  std::string pass_at_1_csv;
  // run,inner,records,mean_fraction_clipped,mean_abs_log_ratio averaged over
  // outer iterations.
  std::string drift_csv;
  std::string summary_text;
  std::vector<std::string> warnings;
};

// Pure function of its inputs. Corrupt lines are skipped and counted in
// warnings; an input without any records adds a warning too.
Report build_report(const std::vector<MetricsSource>& sources);

}  // namespace grlab::cli
