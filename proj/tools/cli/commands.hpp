#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fuxi::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;  // bad arguments, bad config, missing inputs

// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Default configuration of a subcommand as pretty-printed JSON.
std::string default_config(const std::string& command);

}  // namespace fuxi::cli
