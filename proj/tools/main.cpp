// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "relearn/cli.hpp"

int main(int argc, char** argv) { return relearn::run_cli(argc, argv, std::cout, std::cerr); }
