#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cardioseg::cli {

enum ExitCode : int {
    kSuccess = 0,
    kUsage = 1,
    kFormat = 2,
    kNumeric = 3,
    kIo = 4,
};

/// Runs one command line; args[0] is the program name. Help goes to `out`,
/// logs and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cardioseg::cli
