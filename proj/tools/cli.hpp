#ifndef NNMIX_TOOLS_CLI_HPP
#define NNMIX_TOOLS_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace nnmix::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs the command line `args` (without the program name) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nnmix::cli

#endif
