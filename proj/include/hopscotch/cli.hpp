// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hopscotch {

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

/// Parses "0..7" (inclusive), "1,3,5", or a mix such as "0,2..4".
std::vector<int> parse_layer_list(const std::string& text);

}  // namespace hopscotch
