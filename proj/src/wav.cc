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

#include "accent/wav.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "accent/error.h"

namespace accent {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
         (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put16(std::ofstream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open wav: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  const auto bad = [&](const std::string& why) {
    return Error("bad wav file " + path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw bad("not RIFF/WAVE");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    if (pos + 8 + size > bytes.size()) throw bad("truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw bad("short fmt chunk");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      if (format == 0xFFFE && size >= 40) format = le16(chunk + 32);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (!data || rate == 0) throw bad("missing fmt or data chunk");
  if (channels != 1) throw bad("only mono is supported");

  Waveform wave;
  wave.sample_rate_hz = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    wave.samples.resize(data_size / 2);
    for (std::size_t i = 0; i < wave.samples.size(); ++i) {
      const auto s = static_cast<std::int16_t>(le16(data + 2 * i));
      wave.samples[i] = static_cast<float>(s) / 32768.0f;
    }
  } else if (format == 3 && bits == 32) {
    wave.samples.resize(data_size / 4);
    for (std::size_t i = 0; i < wave.samples.size(); ++i) {
      wave.samples[i] = std::bit_cast<float>(le32(data + 4 * i));
    }
  } else {
    throw bad("unsupported sample format " + std::to_string(format) + "/" +
              std::to_string(bits) + " bit");
  }
  return wave;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open for writing: " + path.string());
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  const auto rate = static_cast<std::uint32_t>(wave.sample_rate_hz);
  os.write("RIFF", 4);
  put32(os, 36 + 2 * n);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put32(os, 16);
  put16(os, 1);
  put16(os, 1);
  put32(os, rate);
  put32(os, rate * 2);
  put16(os, 2);
  put16(os, 16);
  os.write("data", 4);
  put32(os, 2 * n);
  for (float f : wave.samples) {
    const float c = std::clamp(f, -1.0f, 1.0f);
    put16(os, static_cast<std::uint16_t>(
                  static_cast<std::int16_t>(std::lround(c * 32767.0f))));
  }
  if (!os) throw Error("failed writing wav: " + path.string());
}

}  // namespace accent
