#pragma once

namespace pand::cli {

/// Full command-line surface; returns the process exit code
/// (0 success, 1 runtime failure, 2 usage/config error).
int run(int argc, const char* const* argv);

}  // namespace pand::cli
