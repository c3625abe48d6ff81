#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace njode::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kData = 3,
  kNumeric = 4,
};

// Runs one command (`generate`, `train`, `eval`, `study`, `export`). `args`
// excludes the program name. Results go to `out`, progress and errors to
// `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace njode::cli
