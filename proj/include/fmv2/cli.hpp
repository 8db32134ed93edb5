#pragma once

// Command-line front end. Subcommands: generate-synth, train, eval,
// gradcheck, inspect-dct, count-params, ensemble, sweep, dump-attention.
//
// Every model and training knob is a flag (--n-hfab, --base-lr, ...) and may
// also appear as `n_hfab=2` in a --config file; flags win over the file,
// the file wins over built-in defaults.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <iosfwd>
#include <string>
#include <vector>

namespace fmv2::cli {

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace fmv2::cli
