// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "g2v/cli/config.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace g2v::cli {

/// Command names as typed, e.g. "pretrain" or "analyze pmf".
std::vector<std::string> command_names();
const Schema& schema_for(const std::string& command);

/// Full entry point. Exit codes: 0 ok, 1 config, 2 data, 3 numerical.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace g2v::cli
