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

// Experiment configuration: one JSON document covering the front end, the
// model, the three training stages, inference and evaluation.
//
// Precedence: defaults < config file < environment < command line. The
// environment form of "train.stage1.max_steps" is AC_TRAIN__STAGE1__MAX_STEPS.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent/features.h"
#include "accent/model.h"
#include "accent/training.h"

namespace accent {

struct SplitConfig {
  std::size_t n_train = 1032;
  std::size_t n_val = 50;
  std::size_t n_test = 50;
  std::uint64_t seed = 1234;
};

struct DataConfig {
  std::filesystem::path corpus_root;
  std::filesystem::path lexicon;
  std::vector<std::string> accented_speakers;
  SplitConfig split;
  FeatureKind feature_kind = FeatureKind::kMel;
  double pretrained_frame_rate_hz = 50.0;
  bool auto_energy_range = true;
  int max_duration_adjust = 2;
};

struct InferenceConfig {
  std::string vocoder_cmd;       // CMD mel.acft out.wav
  std::string feature_cmd;       // CMD audio.wav out.acft (pretrained encoder)
  bool copy_prosody = false;
};

struct EvalConfig {
  std::string asr_cmd;  // CMD audio.wav, transcript on stdout
  int workers = 1;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path run_root = "runs";
  MelConfig mel;
  ProsodyConfig prosody;
  ModelConfig model;
  DataConfig data;
  StageConfig stage1 = StageConfig::defaults(1);
  StageConfig stage2 = StageConfig::defaults(2);
  StageConfig stage3 = StageConfig::defaults(3);
  InferenceConfig inference;
  EvalConfig eval;

  const StageConfig& stage(int k) const;
  StageConfig& stage(int k);
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const nlohmann::json& j);

// Deep-merges overlay into base (objects recurse, everything else replaces).
void merge_json(nlohmann::json& base, const nlohmann::json& overlay);

// Sets a dotted key. The value text is parsed as JSON when possible
// (numbers, booleans, arrays) and kept as a string otherwise.
void set_json_path(nlohmann::json& j, const std::string& dotted_key,
                   const std::string& value_text);

// AC_A__B=v entries of env become {"a": {"b": v}} overrides.
nlohmann::json env_overrides(const std::map<std::string, std::string>& env);
std::map<std::string, std::string> current_environment();

// Layers defaults, an optional file, the environment and "key=value"
// command-line assignments.
nlohmann::json resolve_config(const std::filesystem::path& file,
                              const std::map<std::string, std::string>& env,
                              const std::vector<std::string>& assignments);

// First 12 hex digits of the SHA-256 of the canonical config dump.
std::string config_hash(const nlohmann::json& effective);

// <run_root>/<UTC timestamp>-<config hash>.
std::filesystem::path default_run_dir(const ExperimentConfig& cfg,
                                      const nlohmann::json& effective);

void to_json(nlohmann::json& j, const MelConfig& c);
void from_json(const nlohmann::json& j, MelConfig& c);

}  // namespace accent
