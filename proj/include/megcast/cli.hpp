#pragma once

#include <string>
#include <vector>

namespace megcast {

inline constexpr const char* kToolVersion = "megcast 0.1.0";

// Dispatches one command-line invocation (args excludes the program name).
// Exit codes: 0 success, 1 runtime failure, 2 config or usage error, 3 io
// error, 4 version mismatch. On failure a single line "error: <class>:
// <message>" goes to *error_line when given, otherwise to stderr.
int run_command(const std::vector<std::string>& args, std::string* error_line = nullptr);

}  // namespace megcast
