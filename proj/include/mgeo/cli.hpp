#pragma once

#include <string>
#include <vector>

namespace mgeo {

/// Default output directory when --out-dir is not given.
inline constexpr const char* kOutDirEnv = "MGEO_OUT_DIR";

/// Entry point of the `mgeo` tool. Returns the process exit code.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace mgeo
