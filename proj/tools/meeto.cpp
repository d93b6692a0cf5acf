// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "meeto/cli.hpp"

int main(int argc, char** argv) { return meeto::run_cli(argc, argv, std::cout, std::cerr); }
