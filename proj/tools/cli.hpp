#pragma once

#include <ostream>

namespace kpac::cli {

enum Status : int { kOk = 0, kNegative = 1, kUsage = 2 };

/// Entry point of the `kpac` tool, with output streams injectable for tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kpac::cli
