#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cysgan::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 validation or usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cysgan::cli
