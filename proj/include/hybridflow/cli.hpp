#pragma once

// Command-line front end. Every option can come from a JSON config file
// (--config, keys are the option names), from HYBRIDFLOW_<NAME> environment
// variables, or from flags; flags win over the environment, which wins over
// the file.

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace hybridflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

std::optional<std::string> process_env(const std::string& name);

/// "input-frames" -> "HYBRIDFLOW_INPUT_FRAMES".
std::string env_name(std::string_view option);

/// Every key a config file may contain.
std::vector<std::string> known_keys();

/// Runs one command; `args` excludes the program name. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const EnvLookup& env = process_env);

}  // namespace hybridflow::cli
