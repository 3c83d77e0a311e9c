#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace xalign::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Runs one command line (argv without the program name). Results go to `out`
// unless --out names a file; diagnostics go to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xalign::cli
