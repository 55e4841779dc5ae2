#pragma once

// Command-line front end: `titan <synth|train|eval|infer>` driven by a JSON
// RunConfig plus dotted --section.key overrides. run() never throws; it maps
// failures to exit codes (0 success, 1 training divergence, 2 bad input).

#include <iostream>
#include <string>
#include <vector>

namespace titan::cli {

int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);

int run(int argc, const char* const* argv, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);

}  // namespace titan::cli
