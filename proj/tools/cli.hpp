#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace kl::cli {

/// Process exit codes. Classification verdicts map onto 0 / 3 / 4 / 5 so CI can gate on them.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kBad = 3,
  kUgly = 4,
  kInconclusive = 5,
  kCrossing = 6,
};

/// Runs `kltool` with args (args[0] is the program name) writing messages to out and err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kl::cli
