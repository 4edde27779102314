#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pepnet {

/// Runs the command line `args` (args[0] is the program name). Machine output
/// goes to `out`, progress and diagnostics to `err`. Returns 0 on success,
/// 1 on usage errors and 2 on data or validation errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pepnet
