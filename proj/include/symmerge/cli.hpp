// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "symmerge/model.hpp"

namespace symmerge::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kSuccess = 0,
  kVerificationFailed = 1,
  kUsageError = 2,
  kIncompatible = 3,
  kNumericalFailure = 4,
};

// Runs `symmerge <args...>`; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Newline-delimited, space-separated token ids; blank lines skipped.
std::vector<TokenSequence> read_token_file(const std::filesystem::path& path);

// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::filesystem::path& path);
// Hex SHA-256 over the concatenated bytes of `files`, in order.
std::string files_digest(const std::vector<std::filesystem::path>& files);

}  // namespace symmerge::cli
