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

// The batch jobs behind the command-line tool, as library calls.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent/config.h"
#include "accent/data.h"
#include "accent/eval.h"
#include "accent/training.h"

namespace accent {

struct PreprocessResult {
  std::vector<UtteranceRecord> records;
  ManifestSplit split;
  std::size_t computed = 0;  // utterances whose features were (re)built
  std::size_t skipped = 0;   // cache hits
};

// Builds the manifest, extracts mel/pitch/energy, converts text to phones and
// reconciles aligner durations for every utterance, then writes
//   out_dir/features/<utt>.{mel,pitch,energy}.acft, <utt>.align.json
//   out_dir/manifest.jsonl and manifest_{train,val,test}.jsonl
// Each utterance carries a sidecar <utt>.meta.json with the hash of its
// inputs and outputs; entries whose hashes still match are not recomputed.
// Out-of-lexicon words abort the run with the full list.
PreprocessResult preprocess_corpus(const ExperimentConfig& cfg,
                                   const std::filesystem::path& out_dir);

std::vector<UtteranceRecord> load_split(const std::filesystem::path& data_dir,
                                        const std::string& name);

std::vector<Example> load_examples(const std::vector<UtteranceRecord>& records,
                                   FeatureKind kind,
                                   Eigen::Index pretrained_dim);

// Model config for a fresh stage-1 run: inventory size, mel width, speaker
// count and (optionally) the energy range come from the data.
ModelConfig derive_model_config(const ExperimentConfig& cfg,
                                const std::vector<Example>& train);

struct TrainRequest {
  int stage = 1;
  std::filesystem::path init;  // prerequisite checkpoint, may be empty
  bool allow_skip_stage2 = false;
  std::filesystem::path data_dir;  // preprocess output
  std::filesystem::path run_dir;
};

// Runs one stage into run_dir/stage<k>/ and writes the effective config
// beside the checkpoints.
StageResult train_stage(const ExperimentConfig& cfg,
                        const nlohmann::json& effective,
                        const TrainRequest& req);

// Evaluates a checkpoint on the given split into out_dir.
EvalReport evaluate_checkpoint(const ExperimentConfig& cfg,
                               const std::filesystem::path& checkpoint,
                               const std::filesystem::path& data_dir,
                               const std::string& split_name,
                               const std::filesystem::path& out_dir);

}  // namespace accent
