#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dvt {

// Exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitVerify = 2, kExitIo = 3 };

// Runs `dvt <command> ...`; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dvt
