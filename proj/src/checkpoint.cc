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

#include "accent/checkpoint.h"

#include <fstream>
#include <iterator>

#include "accent/error.h"
#include "accent/tensor_file.h"

namespace accent {
namespace {

constexpr char kMagic[4] = {'A', 'C', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= std::uint64_t{static_cast<unsigned char>(in[pos + i])} << (8 * i);
  }
  return v;
}

FloatTensor to_tensor(const Matrix& m) {
  FloatTensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()),
            static_cast<std::uint32_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    t.data[i] = static_cast<float>(m.data()[i]);
  }
  return t;
}

Matrix from_tensor(const FloatTensor& t) {
  if (t.dims.size() != 2) throw Error("bad checkpoint: tensor is not 2-D");
  Matrix m(t.dims[0], t.dims[1]);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = t.data[i];
  return m;
}

}  // namespace

std::map<std::string, Matrix> Checkpoint::state() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, t] : tensors) out.emplace(name, t.value);
  return out;
}

Checkpoint make_checkpoint(const AccentModel& model, nlohmann::json config,
                           int stage, std::int64_t step,
                           nlohmann::json lineage) {
  Checkpoint c;
  c.model = model.config();
  c.config = std::move(config);
  c.stage = stage;
  c.step = step;
  c.lineage = std::move(lineage);
  for (const auto& p : model.parameters()) {
    c.tensors.emplace(p.name,
                      CheckpointTensor{std::string(to_string(p.group)),
                                       p.var.value()});
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint& ckpt) {
  nlohmann::json header;
  header["model"] = ckpt.model;
  header["config"] = ckpt.config;
  header["stage"] = ckpt.stage;
  header["step"] = ckpt.step;
  header["lineage"] = ckpt.lineage;
  header["tensors"] = nlohmann::json::array();
  std::string blobs;
  for (const auto& [name, t] : ckpt.tensors) {
    const std::string bytes = encode_tensor(to_tensor(t.value));
    header["tensors"].push_back({{"name", name},
                                 {"group", t.group},
                                 {"offset", blobs.size()},
                                 {"bytes", bytes.size()}});
    blobs += bytes;
  }
  const std::string header_text = header.dump();
  std::string out(kMagic, 4);
  put_le(out, kVersion, 4);
  put_le(out, header_text.size(), 8);
  out += header_text;
  out += blobs;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write checkpoint " + tmp.string());
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw Error("cannot write checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
  const std::string where = "bad checkpoint " + path.string() + ": ";
  if (data.size() < 16 || data.compare(0, 4, kMagic, 4) != 0) {
    throw Error(where + "missing ACCK magic");
  }
  if (get_le(data, 4, 4) != kVersion) throw Error(where + "unsupported version");
  const std::uint64_t header_bytes = get_le(data, 8, 8);
  if (header_bytes > data.size() - 16) throw Error(where + "truncated header");

  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(data.substr(16, header_bytes));
    c.model = header.at("model").get<ModelConfig>();
    c.config = header.at("config");
    c.stage = header.at("stage").get<int>();
    c.step = header.at("step").get<std::int64_t>();
    c.lineage = header.at("lineage");
    const std::size_t base = 16 + header_bytes;
    for (const auto& e : header.at("tensors")) {
      const auto offset = e.at("offset").get<std::size_t>();
      const auto bytes = e.at("bytes").get<std::size_t>();
      if (offset > data.size() - base || bytes > data.size() - base - offset) {
        throw Error("tensor blob out of range");
      }
      const std::span<const char> blob(data.data() + base + offset, bytes);
      c.tensors.emplace(e.at("name").get<std::string>(),
                        CheckpointTensor{e.at("group").get<std::string>(),
                                         from_tensor(decode_tensor(blob))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(where + e.what());
  } catch (const Error& e) {
    throw Error(where + e.what());
  }
  return c;
}

}  // namespace accent
