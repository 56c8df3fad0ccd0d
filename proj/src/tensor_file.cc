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

#include "accent/tensor_file.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "accent/error.h"

namespace accent {

namespace {

constexpr char kMagic[4] = {'A', 'C', 'F', 'T'};
constexpr std::uint32_t kMaxDims = 8;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw Error("bad feature file: truncated header");
  }
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
         (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

}  // namespace

std::size_t FloatTensor::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void write_tensor(std::ostream& os, const FloatTensor& t) {
  if (t.data.size() != t.numel()) {
    throw Error("tensor payload does not match its dims");
  }
  os.write(kMagic, 4);
  put_u32(os, kTensorFileVersion);
  put_u32(os, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_u32(os, d);
  for (float f : t.data) put_u32(os, std::bit_cast<std::uint32_t>(f));
  if (!os) throw Error("failed writing tensor");
}

FloatTensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error("bad feature file: missing ACFT magic");
  }
  if (get_u32(is) != kTensorFileVersion) {
    throw Error("bad feature file: unsupported version");
  }
  const std::uint32_t ndim = get_u32(is);
  if (ndim == 0 || ndim > kMaxDims) {
    throw Error("bad feature file: invalid ndim " + std::to_string(ndim));
  }
  FloatTensor t;
  t.dims.resize(ndim);
  for (auto& d : t.dims) d = get_u32(is);
  const std::size_t n = t.numel();
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.data[i] = std::bit_cast<float>(get_u32(is));
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const FloatTensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open for writing: " + path.string());
  write_tensor(os, t);
}

FloatTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("bad feature file: cannot open " + path.string());
  FloatTensor t = read_tensor(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw Error("bad feature file: trailing bytes in " + path.string());
  }
  return t;
}

std::string encode_tensor(const FloatTensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  return std::move(os).str();
}

FloatTensor decode_tensor(std::span<const char> bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()),
                        std::ios::binary);
  FloatTensor t = read_tensor(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw Error("bad feature file: trailing bytes");
  }
  return t;
}

}  // namespace accent
