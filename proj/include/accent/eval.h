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

// Objective evaluation: word error rate through an external ASR adapter,
// plus the speech/text alignment distance of the converted utterances.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent/data.h"
#include "accent/inference.h"

namespace accent {

// Minimal number of substitutions + insertions + deletions.
std::size_t edit_distance(const std::vector<std::string>& ref,
                          const std::vector<std::string>& hyp);

// edit_distance / |ref|. An empty reference scores 0 against an empty
// hypothesis and throws otherwise (the rate is undefined).
double wer(const std::vector<std::string>& ref,
           const std::vector<std::string>& hyp);

struct Transcript {
  bool ok = false;
  std::string text;   // whitespace-collapsed stdout
  std::string error;  // set when !ok
};

// Runs "CMD audio.wav" (or {audio}) and captures stdout. Never throws for
// adapter failures: nonzero exits and empty output come back as !ok.
Transcript transcribe_adapter(const std::filesystem::path& audio,
                              const std::string& adapter_cmd);

struct UtteranceScore {
  std::string utt_id;
  std::string speaker;
  bool ok = false;
  std::string error;
  std::string reference;
  std::string hypothesis;
  std::size_t errors = 0;
  std::size_t ref_words = 0;
  double alignment_distance = 0.0;
  bool has_alignment = false;
};

struct SpeakerScore {
  std::size_t errors = 0;
  std::size_t words = 0;
  std::size_t utterances = 0;
  double wer = 0.0;
};

struct EvalReport {
  double corpus_wer = 0.0;  // total errors / total reference words
  std::map<std::string, SpeakerScore> per_speaker;
  std::vector<UtteranceScore> failures;
  double alignment_distance_mean = 0.0;
  std::string normalizer;
  std::vector<UtteranceScore> utterances;
};

nlohmann::json to_json(const EvalReport& r);

// Scores the hypothesis after shared text normalization.
UtteranceScore score_utterance(const std::string& utt_id,
                               const std::string& speaker,
                               const std::string& reference,
                               const std::string& hypothesis);

// Error-weighted aggregation of per-utterance scores; failed utterances are
// listed but excluded from WER.
EvalReport aggregate_report(const std::vector<UtteranceScore>& scores);

struct EvalOptions {
  std::string vocoder_cmd;
  std::string asr_cmd;
  std::filesystem::path out_dir;
  int workers = 1;
  Eigen::Index pretrained_dim = 0;
  bool copy_prosody = false;
};

// Converts every record (features loaded from the preprocessed cache),
// vocodes, transcribes and scores against the record text. Per-utterance
// failures are recorded and the run continues. Writes report.json, the
// mels and the wavs into opts.out_dir.
EvalReport evaluate_corpus(const std::vector<UtteranceRecord>& records,
                           const Converter& converter,
                           const EvalOptions& opts);

}  // namespace accent
