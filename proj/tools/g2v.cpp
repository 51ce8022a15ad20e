// SPDX-License-Identifier: Apache-2.0
#include "g2v/cli/commands.hpp"

#include <iostream>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return g2v::cli::run_cli(args, std::cout, std::cerr);
}
