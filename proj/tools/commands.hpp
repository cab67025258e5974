#pragma once

#include <iosfwd>

namespace nasrl::cli {

// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nasrl::cli
