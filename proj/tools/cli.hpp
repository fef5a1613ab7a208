#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nf {

/// Runs one subcommand. args excludes the program name. Returns 0 on
/// success, 1 on a runtime failure, 2 on a usage error.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nf
