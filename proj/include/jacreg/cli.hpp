#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace jacreg {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitUsage = 2,
  kExitVerificationFailed = 3,
};

/// Entry point of the `jacreg` tool. `args` excludes the program name.
/// Subcommands: train, verify-taylor, ablation, robustness, histogram.
/// Failures print one JSON object {"error": {"kind", "message", "path"?}}
/// to `err`; artifacts are written to temporary names and renamed only once
/// the command has succeeded.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace jacreg
