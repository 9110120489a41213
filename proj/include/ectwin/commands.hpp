#pragma once

#include <iosfwd>

namespace ectwin {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

/// Entry point of the `ectwin` tool. Returns the process exit code: 0 success,
/// 1 invalid input or configuration, 2 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ectwin
