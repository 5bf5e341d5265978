#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fediskit/config.hpp"

namespace fediskit {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point behind the `fediskit` binary. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Output directory after applying the FEDISKIT_OUT override.
std::filesystem::path resolve_output_dir(const RunConfig& config);

// Writes manifest.txt: command, seed, config hash, tool versions and the fully
// resolved config, which parse_config_file accepts back.
void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const RunConfig& config);

}  // namespace fediskit
