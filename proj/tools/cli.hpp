#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xct::cli {

/// Exit codes: 0 success, 1 user error (bad flags, bad input), 2 internal error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

/// Runs one command line; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xct::cli
