#pragma once

#include <iosfwd>

namespace cgmlp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Entry point behind the cgmlp executable: train, compare, eval, visualize
// and gradcheck subcommands. Returns 0 on success, 1 on usage errors and 2 on
// runtime failures (non-finite loss, I/O, format errors).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cgmlp::cli
