#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tracecal::cli {

// Umbrella command line. Returns the process exit code: 0 on success, 1 on a
// runtime failure, 2 on a usage error. Failures are written to `err` as one
// JSON object {"error": kind, "message": text}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tracecal::cli
