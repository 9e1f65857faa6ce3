#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace percep::cli {

// Exit codes: 0 success, 1 domain or validation failure, 2 usage error.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace percep::cli
