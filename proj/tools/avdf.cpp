// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "avdf/cli.hpp"

int main(int argc, char** argv) { return avdf::cli::run(argc, argv, std::cout, std::cerr); }
