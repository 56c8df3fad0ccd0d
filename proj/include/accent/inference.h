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

// Conversion: source features -> speech encoder -> speaker and prosody
// enrichment -> decoder -> mel. No text enters this path.

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "accent/checkpoint.h"
#include "accent/features.h"
#include "accent/model.h"

namespace accent {

struct MelSpectrogram {
  Matrix frames;          // T x n_mels, after the PostNet residual
  Matrix before_postnet;  // T x n_mels
};

struct ConvertOptions {
  // Use the source utterance's pitch/energy instead of the predictors.
  bool copy_prosody = false;
  std::optional<ProsodyContours> source_prosody;
  // Externally computed 1 x d speaker vector replacing the table lookup.
  std::optional<Matrix> speaker_vector;
};

// Feature kind the speech encoder of ckpt was aligned on (the latest
// stage-2/3 lineage entry); kMel when the lineage does not say.
FeatureKind checkpoint_feature_kind(const Checkpoint& ckpt);

class Converter {
 public:
  // Throws "no aligned speech encoder" for stage-1 checkpoints.
  explicit Converter(const Checkpoint& ckpt);

  // Output T equals features.num_frames(). Throws for unknown speakers,
  // feature kinds other than the checkpoint's, and wrong prosody lengths.
  MelSpectrogram convert(const AcousticFeatures& features, int speaker_id,
                         const ConvertOptions& opts = {}) const;

  // Mean per-frame ||H^t - H^s||_2 against the text branch with the given
  // phones and durations.
  double alignment_distance(const AcousticFeatures& features,
                            const std::vector<int>& phone_ids,
                            const std::vector<int>& durations) const;

  const AccentModel& model() const { return *model_; }
  FeatureKind feature_kind() const { return kind_; }
  int stage() const { return stage_; }

 private:
  std::unique_ptr<AccentModel> model_;
  FeatureKind kind_;
  int stage_;
};

MelSpectrogram convert(const AcousticFeatures& features, int speaker_id,
                       const Checkpoint& ckpt,
                       const ConvertOptions& opts = {});

// Writes the mel as a T x n_mels ACFT tensor. Rejects empty or non-finite
// input before touching the file system.
void export_mel(const Matrix& mel, const std::filesystem::path& path);

// Runs "CMD mel.acft out.wav" ({in}/{out} placeholders are honoured) and
// returns out_wav. Throws "no vocoder configured" for an empty command and
// propagates a nonzero exit with an excerpt of stderr.
std::filesystem::path invoke_vocoder_adapter(
    const Matrix& mel, const std::string& adapter_cmd,
    const std::filesystem::path& out_wav);

// Runs the pretrained-encoder adapter "CMD audio.wav out.acft" and loads the
// result resampled to target_frames.
AcousticFeatures run_feature_adapter(const std::string& adapter_cmd,
                                     const std::filesystem::path& wav,
                                     const std::filesystem::path& out_acft,
                                     Eigen::Index target_frames,
                                     Eigen::Index expected_dim);

}  // namespace accent
