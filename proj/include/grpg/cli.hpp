#pragma once

#include <string>
#include <vector>

#include "grpg/metrics.hpp"
#include "grpg/serialize.hpp"

namespace grpg {

// Entry point shared by the binary and the tests. Returns the process exit
// status: 0 success, 1 runtime failure, 2 usage error.
int run_command(const std::vector<std::string>& args);

// Aligned text table in the benchmark column order; ablation style renders
// one row per variant with its trainable parameter count.
std::string render_report(const MetricReport& report, const std::string& style = "main",
                          const std::map<std::string, size_t>& param_counts = {});

// Full invariant sweep used by the `selftest` subcommand; prints one line
// per check. Returns true when everything holds.
bool run_selftest(std::ostream& out);

}  // namespace grpg
