#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace nfr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one command line (args exclude the program name). Messages go to
/// `out` and `err`; the return value is the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nfr
