#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace varlab::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

// Runs one subcommand. args excludes the program name. Progress goes to
// err, results (CSV tables, summaries) to out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace varlab::cli
