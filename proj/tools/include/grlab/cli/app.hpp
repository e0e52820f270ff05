#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace grlab::cli {

enum ExitCode : int {
  kExitOk = 0,
  // report only: tables were written but some input was skipped.
  kExitWarnings = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitRuntime = 4,
};

// Entry point shared by the executable and the tests. args excludes the
// program name. Failures print one JSON line to err.
int run_app(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace grlab::cli
