#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace biorag {

enum ExitCode : int { kExitOk = 0, kExitRunError = 1, kExitUsage = 2 };

/// Runs the command line `args` (without the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct ConfigKey {
    std::string subcommand;  // "run", "index build", ...
    std::string name;        // long flag without dashes
    std::string default_value;
};

/// Every option accepted on the command line or in a config file.
std::vector<ConfigKey> cli_config_keys();

}  // namespace biorag
