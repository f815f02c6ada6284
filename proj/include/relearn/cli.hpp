// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

namespace relearn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;

inline constexpr const char* kVersion = "0.1.0";

/// Entry point of the `relearn` tool: train, probe, hessian, transfer,
/// fewshot and compare.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace relearn
