#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace featurescope::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitComputation = 2;

// Entry point behind the `featurescope` binary. `args` excludes the program
// name. Prints a one-line summary per subcommand to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace featurescope::cli
