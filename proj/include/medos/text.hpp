// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace medos::text {

// Collapses runs of whitespace to one space and strips both ends.
std::string normalize_whitespace(std::string_view s);

// Splits on single spaces of already-normalized text.
std::vector<std::string> split_words(std::string_view normalized);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// 64-bit FNV-1a, optionally continuing from a previous state.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t v);

// FNV-1a of a whole file's bytes as 16 hex digits; throws DataError if unreadable.
std::string file_hash(const std::string& path);

std::string read_file(const std::string& path);

// Writes to `<path>.tmp` then renames over `path`.
void write_file_atomic(const std::string& path, std::string_view contents);

}  // namespace medos::text
