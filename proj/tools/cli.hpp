#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace apitrace::cli {

inline constexpr int k_exit_ok = 0;
inline constexpr int k_exit_usage = 1;
inline constexpr int k_exit_data = 2;

/// Runs one command line (args[0] is the program name). Normal output goes
/// to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace apitrace::cli
