// Command-line front end. Subcommands: simulate, fit, test, zeros,
// logscore, power, rerun. Every run writes its primary outputs plus a
// manifest JSON (command, effective config and its hash, seed, versions)
// into the --out directory; rerunning the manifest's command reproduces the
// outputs byte for byte.
#pragma once

#include <string>
#include <vector>

namespace rrfb {

inline constexpr const char* kToolVersion = "1.0.0";

// args excludes the program name. Exit codes: 0 success, 2 usage error,
// 3 data validation error, 4 numerical failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace rrfb
