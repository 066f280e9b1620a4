#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace transact::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,         // no/unknown subcommand, unknown flag, bad flag value
  kMissingFile = 3,
  kInvalidConfig = 4,
  kBadFormat = 5,
  kBadInput = 6,
  kNumeric = 7,
};

/// Runs the `transact` command line. `args` excludes the program name.
/// Structured errors go to `err` as one JSON line.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace transact::cli
