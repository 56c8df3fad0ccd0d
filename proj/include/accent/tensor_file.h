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

// ACFT tensor files.
//
// Layout (all integers little-endian):
//   char[4]  magic "ACFT"
//   u32      version (= 1)
//   u32      ndim
//   u32      dims[ndim]
//   f32      payload, row-major, prod(dims) values

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace accent {

inline constexpr std::uint32_t kTensorFileVersion = 1;

struct FloatTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t numel() const;
};

void write_tensor(std::ostream& os, const FloatTensor& t);
FloatTensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const FloatTensor& t);
// Throws Error("bad feature file: ...") on any malformed input.
FloatTensor load_tensor(const std::filesystem::path& path);

// In-memory encode/decode, used by the checkpoint archive.
std::string encode_tensor(const FloatTensor& t);
FloatTensor decode_tensor(std::span<const char> bytes);

}  // namespace accent
