// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace meeto {

// Value parsers for key=value configuration; all throw ConfigError naming the key.
std::size_t parse_size(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
/// Comma-separated sizes; "none" or empty gives an empty list.
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);

std::string format_double(double v);
std::string join_sizes(const std::vector<std::size_t>& values);

}  // namespace meeto
