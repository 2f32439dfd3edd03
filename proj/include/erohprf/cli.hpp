#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace erohprf {

// Runs one subcommand. args excludes the program name. Returns 0 on success,
// 1 on verification failure, 2 on usage or parse errors.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace erohprf
