#pragma once

#include <iosfwd>

namespace cabb::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point for the `cabb` executable. Subcommands: gen-data,
/// train-source, adapt, inspect-split, report; `--print-config` at top level.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cabb::cli
