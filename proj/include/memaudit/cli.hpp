#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace memaudit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Entry point of the `memaudit` binary. stdout gets the human summary,
// stderr diagnostics. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace memaudit
