// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace medos::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// args excludes the program name. Every call appends one manifest line to
// <out-dir>/manifests.jsonl.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace medos::cli
