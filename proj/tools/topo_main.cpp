// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "topo/cli.hpp"

int main(int argc, char** argv) { return topo::run_cli(argc, argv, std::cout, std::cerr); }
