// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "semask/cli.hpp"

int main(int argc, char** argv) {
  return semask::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
