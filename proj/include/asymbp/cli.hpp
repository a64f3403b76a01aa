#ifndef ASYMBP_CLI_HPP
#define ASYMBP_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace asymbp {

/// Exit codes: 0 success, 1 runtime failure (including a failed gradient
/// check), 2 invalid config or command line.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Entry point of the `asymbp` tool. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace asymbp

#endif // ASYMBP_CLI_HPP
