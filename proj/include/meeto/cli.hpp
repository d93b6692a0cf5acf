// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "meeto/config.hpp"
#include "meeto/model.hpp"
#include "meeto/tensor.hpp"

namespace meeto {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitData = 2, kExitNumeric = 3, kExitInternal = 4 };

/// Parses argv and dispatches to a verb. Errors are reported on `err` and
/// mapped to ExitCode.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

int cmd_train(RunConfig cfg, std::ostream& out);
int cmd_eval(RunConfig cfg, std::ostream& out);
int cmd_bench(RunConfig cfg, std::ostream& out);
int cmd_ablate(RunConfig cfg, const std::string& axis, std::ostream& out);
int cmd_merge_demo(const RunConfig& cfg, const std::filesystem::path& tokens_file, std::ostream& out);

/// One token per line, values separated by whitespace or commas; `#` starts a
/// comment. Throws DataError on ragged or non-numeric input.
Tensor read_token_file(const std::filesystem::path& path);

/// Human-readable trace of one reduction step on tokens [T,D] under
/// cfg.model.reduction, seeded by cfg.train.seed.
std::string merge_demo_trace(const RunConfig& cfg, const Tensor& tokens);

struct AblationCell {
  std::string value;
  ReductionConfig reduction;
};

/// Variants of `base` along one axis; throws ConfigError for unknown axes.
std::vector<AblationCell> ablation_cells(const ModelConfig& base, const std::string& axis);
std::vector<std::string> ablation_axes();

}  // namespace meeto
