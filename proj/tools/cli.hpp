#pragma once

#include <string>
#include <vector>

namespace mqar::cli {

// Entry point behind the mqar binary; argv excludes the program name.
// Returns the process exit code: 0 iff all internal checks passed.
int run(const std::vector<std::string>& args);

}  // namespace mqar::cli
