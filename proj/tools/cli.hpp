#pragma once

#include <iosfwd>

namespace dctm::cli {

/// Runs one command line. Exit codes: 0 ok, 1 runtime error, 2 usage or
/// configuration error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dctm::cli
