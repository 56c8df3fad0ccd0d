// Copyright 2026 The nar-accent Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Content hashing and external-command plumbing.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace accent {

std::string sha256_hex(std::string_view bytes);
// Throws when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// POSIX shell single-quoting.
std::string shell_quote(std::string_view s);

// Fills "{name}" placeholders of an adapter command with quoted values. When
// the command has none of the placeholders, the values are appended in
// order_if_absent order instead.
std::string expand_command(
    const std::string& command,
    const std::map<std::string, std::string>& values,
    const std::vector<std::string>& order_if_absent);

struct CommandResult {
  int exit_code = -1;  // 128 + signal when killed by a signal
  std::string out;
  std::string err;
};

// Runs command through /bin/sh -c, capturing stdout and stderr.
CommandResult run_command(const std::string& command);

// Last max_bytes of s, for error messages.
std::string tail_excerpt(const std::string& s, std::size_t max_bytes = 400);

}  // namespace accent
