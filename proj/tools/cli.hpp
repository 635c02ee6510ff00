#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cfr::cli {

/// Runs one subcommand. Returns 0 on success, 1 when a stage fails and 2 on usage errors.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace cfr::cli
