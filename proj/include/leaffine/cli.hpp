#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace leaffine {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand (gen-data, lr-find, train, eval, predict, report, serve).
/// `args` excludes the program name. Results go to `out`, progress and the
/// one-line diagnostic to `err`. Usage and config errors return 2, any other
/// failure 1.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace leaffine
