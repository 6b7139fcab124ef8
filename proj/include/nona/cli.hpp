#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nona {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidationFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs the `nona` command line. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nona
