// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Settings resolve in three layers: built-in
// defaults, then the --config JSON document, then individual flags.
//
// Exit codes: 0 success, 2 config or usage error, 3 data or checkpoint
// error, 4 numerical failure, 5 failed parity or gradient check.
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace biflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;
inline constexpr int kExitParity = 5;

/// args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace biflow::cli
