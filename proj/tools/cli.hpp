#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wfuse::cli {

// Exit codes: 0 success, 1 check or run failure, 2 usage or configuration error.
// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wfuse::cli
