#pragma once

#include <string>
#include <vector>

namespace neuralme {

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one CLI command. Exit codes: 0 success, 1 usage error, 2 runtime
/// error. Errors are single-line diagnostics on the error stream.
int run_cli(const std::vector<std::string>& args);

} // namespace neuralme
