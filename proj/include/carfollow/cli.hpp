#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace carfollow {

enum ExitCode : int {
  kExitOk = 0,
  kExitSelfTestFailed = 1,
  kExitIo = 2,
  kExitFormat = 3,
  kExitConfig = 4,
  kExitInternal = 5,
};

/// Entry point of the `carfollow` tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace carfollow
