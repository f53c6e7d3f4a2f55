#pragma once

#include <ostream>
#include <string>
#include <vector>

// Command-line front end: simulate, reconstruct, train, stain, evaluate,
// tile, stitch and demo.

namespace fpstain::cli {

/// Exit status: 0 success, 1 validation error (bad flags, missing or
/// malformed inputs), 2 runtime or numeric failure.
enum ExitCode : int { kOk = 0, kValidation = 1, kRuntime = 2 };

/// `args` excludes the program name. Diagnostics go to `err` as one line.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Expands `key = value` lines into `--key=value` arguments. Blank lines and
/// `#` comments are skipped.
std::vector<std::string> parse_config(const std::string& text);

}  // namespace fpstain::cli
