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

// Corpus manifests, text-disjoint splits and padded mini-batches.

#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent/autograd.h"
#include "accent/features.h"

namespace accent {

enum class AccentTag { kNative, kAccented };

std::string_view to_string(AccentTag tag);
AccentTag accent_tag_from_string(std::string_view name);

struct UtteranceRecord {
  std::string utt_id;  // "<speaker>_<stem>", unique within a manifest
  std::string speaker;
  int speaker_id = 0;
  AccentTag accent = AccentTag::kNative;
  std::string text;
  std::filesystem::path wav_path;
  std::filesystem::path durations_path;   // raw aligner output, optional
  std::filesystem::path pretrained_path;  // external encoder output, optional
  // Filled by preprocessing.
  std::filesystem::path mel_path;
  std::filesystem::path pitch_path;
  std::filesystem::path energy_path;
  std::filesystem::path alignment_path;  // phone IDs + reconciled durations
};

void to_json(nlohmann::json& j, const UtteranceRecord& r);
void from_json(const nlohmann::json& j, UtteranceRecord& r);

// Scans corpus_root/<speaker>/<stem>.{wav,txt}. Optional siblings:
// <stem>.dur (aligner durations) and <stem>.pre.acft (pretrained features).
// Speaker IDs follow the sorted speaker directory names. Any wav without a
// txt (or vice versa) aborts with an error naming every unpaired utterance.
std::vector<UtteranceRecord> build_manifest(
    const std::filesystem::path& corpus_root,
    const std::set<std::string>& accented_speakers = {});

void write_manifest(const std::filesystem::path& path,
                    const std::vector<UtteranceRecord>& records);
std::vector<UtteranceRecord> read_manifest(const std::filesystem::path& path);

// Throws naming the first record whose referenced files are missing.
void check_manifest_files(const std::vector<UtteranceRecord>& records);

struct ManifestSplit {
  std::vector<UtteranceRecord> train;
  std::vector<UtteranceRecord> val;
  std::vector<UtteranceRecord> test;
};

// Per-speaker split with exact val/test quotas and no normalized text shared
// between subsets (across all speakers). Every record not placed in val or
// test lands in train, so the result partitions the input; each speaker must
// end up with at least n_train training utterances.
ManifestSplit split_manifest(std::vector<UtteranceRecord> records,
                             std::size_t n_train, std::size_t n_val,
                             std::size_t n_test, std::uint64_t seed);

// One utterance with every array needed by any training stage loaded.
struct Example {
  std::string utt_id;
  int speaker_id = 0;
  AccentTag accent = AccentTag::kNative;
  std::string text;
  Matrix mel;       // T x n_mels target
  Matrix features;  // T x D speech-encoder input (may be empty)
  FeatureKind feature_kind = FeatureKind::kMel;
  std::vector<int> phone_ids;
  std::vector<int> durations;
  std::vector<double> pitch;
  std::vector<double> energy;

  int num_frames() const { return static_cast<int>(mel.rows()); }
};

// Loads the cached arrays of a preprocessed record. With kind == kPretrained
// the external features are resampled to the mel frame count.
Example load_example(const UtteranceRecord& record, FeatureKind kind,
                     Eigen::Index pretrained_dim);

void write_alignment(const std::filesystem::path& path,
                     const std::vector<int>& phone_ids,
                     const std::vector<int>& durations);
void read_alignment(const std::filesystem::path& path,
                    std::vector<int>& phone_ids, std::vector<int>& durations);

struct Batch {
  std::vector<std::string> utt_ids;
  std::vector<Matrix> features;  // B x (T_max x D); empty when unused
  std::vector<int> feature_lengths;
  std::vector<std::vector<int>> phone_ids;  // B x N_max
  std::vector<int> phone_lengths;
  std::vector<std::vector<int>> durations;  // B x N_max
  std::vector<Matrix> mel_targets;          // B x (T_max x n_mels)
  std::vector<std::vector<double>> pitch;   // B x T_max
  std::vector<std::vector<double>> energy;  // B x T_max
  std::vector<int> speaker_ids;
  std::vector<ag::Mask> frame_mask;  // B x T_max
  std::vector<ag::Mask> phone_mask;  // B x N_max
  int t_max = 0;
  int n_max = 0;

  std::size_t size() const { return speaker_ids.size(); }
};

// Right-pads every array to the batch maxima with pad_value.
// Errors on an empty batch or on feature/mel width mismatches.
Batch make_batch(const std::vector<const Example*>& examples,
                 double pad_value = 0.0);
Batch make_batch(const std::vector<Example>& examples, double pad_value = 0.0);

}  // namespace accent
