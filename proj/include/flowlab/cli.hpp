#pragma once

#include <string>
#include <vector>

namespace flowlab {

/// Command-line front end. Subcommands: gen-data, train, reconstruct, edit,
/// sweep, ablate, report. Returns 0 on success, 1 on usage or config errors,
/// 2 on runtime failures.
int cli_main(const std::vector<std::string>& args);
int cli_main(int argc, const char* const* argv);

}  // namespace flowlab
