#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pitrans {

/// Runs one subcommand. Returns 0 on success, 1 on a runtime failure and 2 on a
/// usage error (unknown subcommand or flag, bad flag value).
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pitrans
