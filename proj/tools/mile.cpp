// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "mile/cli.hpp"

int main(int argc, char** argv) {
  return mile::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
