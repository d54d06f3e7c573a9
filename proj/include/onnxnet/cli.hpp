#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace onnxnet {

// Exit statuses of the command-line tool.
enum ExitStatus : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

// Runs the tool on `args` (args[0] is the program name). Payload goes to
// `out`, diagnostics and one-line JSON errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace onnxnet
