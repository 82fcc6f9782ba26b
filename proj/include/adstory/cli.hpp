#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace adstory {

enum ExitCode : int {
  kExitOk = 0,
  kExitInvariant = 1,  // evaluate: a report invariant failed
  kExitInput = 2,
  kExitNumeric = 3,
};

/// Runs the command line `args` (without the program name). Diagnostics go
/// to `err`, progress to `out` unless --quiet.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace adstory
