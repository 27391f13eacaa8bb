// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mile {

// Exit statuses of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // run failed or a check did not pass
inline constexpr int kExitUsage = 2;    // bad arguments or configuration

/// Entry point of the `mile` tool: subcommands train, eval, count-params,
/// gen-instruct and gradcheck. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mile
