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

// Shared fixtures: scratch directories, random tensors, micro models and
// in-memory examples.

#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "accent/data.h"
#include "accent/model.h"
#include "accent/random.h"

namespace accent::testing {

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("accent_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols,
                            std::mt19937_64& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = scale * (2.0 * uniform01(rng) - 1.0);
  }
  return m;
}

// Small enough for exhaustive finite differences, still exercising every
// block (two heads, kernel-3 convolutions, a 2-layer PostNet).
inline ModelConfig micro_config() {
  ModelConfig c;
  c.hidden_dim = 4;
  c.heads = 2;
  c.encoder_layers = 1;
  c.speech_encoder_layers = 1;
  c.decoder_layers = 1;
  c.ffn_dim = 4;
  c.ffn_kernel = 3;
  c.dropout = 0.1;
  c.predictor_hidden = 2;
  c.predictor_kernel = 3;
  c.predictor_dropout = 0.2;
  c.postnet_dim = 2;
  c.postnet_kernel = 3;
  c.postnet_layers = 2;
  c.n_phones = 8;
  c.n_speakers = 2;
  c.n_mels = 3;
  c.pretrained_dim = 2;
  c.n_bins = 4;
  return c;
}

// Adds uniform noise to every parameter. Zero-initialised biases and norm
// offsets otherwise put ReLUs exactly on their kink, where central
// differences straddle two one-sided slopes.
inline void jitter_parameters(AccentModel& model, std::mt19937_64& rng,
                              double scale = 0.1) {
  auto state = model.state_dict();
  for (auto& [name, value] : state) {
    value += random_matrix(value.rows(), value.cols(), rng, scale);
  }
  model.load_state_dict(state);
}

// A somewhat larger model for shape, masking and training-loop tests.
inline ModelConfig small_config() {
  ModelConfig c = micro_config();
  c.hidden_dim = 8;
  c.ffn_dim = 16;
  c.predictor_hidden = 8;
  c.postnet_dim = 8;
  c.postnet_layers = 3;
  c.encoder_layers = 2;
  c.speech_encoder_layers = 2;
  c.decoder_layers = 2;
  c.n_phones = 12;
  c.n_mels = 5;
  c.pretrained_dim = 6;
  c.n_bins = 8;
  return c;
}

// Random utterance consistent with cfg: phones in [3, n_phones), durations
// in [1, 3], voiced pitch inside the model's range, positive energy.
inline Example random_example(const ModelConfig& cfg, std::mt19937_64& rng,
                              int n_phones, int speaker_id,
                              FeatureKind kind = FeatureKind::kMel,
                              AccentTag accent = AccentTag::kNative) {
  Example ex;
  ex.utt_id = "u" + std::to_string(rng() % 1000000);
  ex.speaker_id = speaker_id;
  ex.accent = accent;
  int t = 0;
  for (int i = 0; i < n_phones; ++i) {
    ex.phone_ids.push_back(3 + static_cast<int>(uniform_below(rng, cfg.n_phones - 3)));
    ex.durations.push_back(1 + static_cast<int>(uniform_below(rng, 3)));
    t += ex.durations.back();
  }
  ex.mel = random_matrix(t, cfg.n_mels, rng, 2.0);
  ex.feature_kind = kind;
  ex.features = kind == FeatureKind::kMel
                    ? ex.mel
                    : random_matrix(t, cfg.pretrained_dim, rng);
  for (int i = 0; i < t; ++i) {
    const bool voiced = uniform01(rng) < 0.8;
    ex.pitch.push_back(voiced ? 80.0 + 250.0 * uniform01(rng) : 0.0);
    ex.energy.push_back(0.5 + 5.0 * uniform01(rng));
  }
  return ex;
}

}  // namespace accent::testing
