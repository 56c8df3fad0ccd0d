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

// Single-file checkpoint archive:
//
//   "ACCK" | u32 version | u64 header_bytes | JSON header | tensor blobs
//
// The header holds the model config, a frozen copy of the experiment config,
// the stage tag, global step, lineage and a table of {name, group, offset,
// bytes} entries; every blob is an ACFT tensor.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "accent/model.h"

namespace accent {

struct CheckpointTensor {
  std::string group;
  Matrix value;
};

struct Checkpoint {
  ModelConfig model;
  nlohmann::json config = nlohmann::json::object();  // experiment echo
  int stage = 0;
  std::int64_t step = 0;
  // One object per completed stage, oldest first.
  nlohmann::json lineage = nlohmann::json::array();
  std::map<std::string, CheckpointTensor> tensors;

  std::map<std::string, Matrix> state() const;
};

Checkpoint make_checkpoint(const AccentModel& model, nlohmann::json config,
                           int stage, std::int64_t step,
                           nlohmann::json lineage);

// Writes via a temporary file and rename, so readers never see a torn file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace accent
