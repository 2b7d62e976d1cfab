#pragma once

#include <string>
#include <vector>

namespace foamfed {

// Full command-line surface as a library call so tests can drive it
// in-process. Returns the process exit code: 0 success, 1 runtime failure,
// 2 usage error.
int cli_run(const std::vector<std::string>& args);
int cli_run(int argc, const char* const* argv);

}  // namespace foamfed
