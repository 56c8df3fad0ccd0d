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

// Acoustic front end: log-mel spectrograms, pitch/energy contours and
// externally computed pretrained-encoder features. All functions are pure
// and may be called from concurrent workers.

#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "accent/autograd.h"

namespace accent {

using ag::Matrix;

struct Waveform {
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate_hz = 24000;

  // Throws unless samples are finite, non-empty and the rate is positive.
  void validate() const;
};

struct MelConfig {
  int sample_rate_hz = 24000;
  int n_fft = 2048;
  int hop_length = 300;   // 12.5 ms
  int win_length = 1200;  // 50 ms
  int n_mels = 80;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = 1e-5;
  // Center padding pads n_fft/2 zeros on both sides, so frame t is centred
  // on sample t * hop_length.
  bool center = true;

  void validate() const;
  // Closed-form frame count for a signal of num_samples samples.
  int num_frames(std::size_t num_samples) const;
  double frame_rate_hz() const {
    return static_cast<double>(sample_rate_hz) / hop_length;
  }
};

enum class FeatureKind { kMel, kPretrained };

std::string_view to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(std::string_view name);

struct AcousticFeatures {
  Matrix frames;  // T x D, time-major
  FeatureKind source_kind = FeatureKind::kMel;
  double frame_rate_hz = 0.0;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

struct ProsodyConfig {
  double f0_min_hz = 60.0;
  double f0_max_hz = 400.0;
  // Cumulative-mean-normalized difference threshold for voicing.
  double voicing_threshold = 0.15;
};

struct ProsodyContours {
  std::vector<double> pitch;   // Hz, 0 = unvoiced
  std::vector<double> energy;  // L2 norm of the frame's STFT magnitude
};

// Slaney-style mel scale (linear below 1 kHz, logarithmic above), matching
// librosa's default so HiFi-GAN style vocoders can consume the output.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// n_mels x (n_fft/2 + 1) triangular filters with Slaney area normalization.
Matrix mel_filterbank(const MelConfig& cfg);

// T x (n_fft/2 + 1) STFT magnitude with a periodic Hann window of
// win_length samples centred inside the n_fft frame.
Matrix stft_magnitude(const Waveform& wave, const MelConfig& cfg);

// frames = log(max(filterbank * |STFT|, log_floor)).
// Throws Error("input too short") when the waveform is shorter than one
// analysis window.
AcousticFeatures compute_mel(const Waveform& wave, const MelConfig& cfg);

// Pitch by a YIN-style autocorrelation estimator evaluated at every mel frame
// centre; energy is the per-frame L2 norm of the STFT magnitude. Both have
// exactly compute_mel(wave, cfg).num_frames() entries.
ProsodyContours extract_prosody(const Waveform& wave, const MelConfig& cfg,
                                const ProsodyConfig& pcfg = {});

// Linear interpolation along time with half-sample alignment (sample centres
// map onto sample centres, ends clamped). Integer up/down factors therefore
// pass exactly through the original rows.
Matrix resample_frames(const Matrix& frames, Eigen::Index target_frames);

// Loads a T' x D ACFT matrix produced offline by a pretrained encoder and
// resamples it to target_frames rows.
// Errors: "bad feature file" for unreadable/malformed/non-finite data,
// "feature dim mismatch" when D != expected_dim.
AcousticFeatures load_pretrained_features(const std::filesystem::path& path,
                                          Eigen::Index target_frames,
                                          Eigen::Index expected_dim,
                                          double frame_rate_hz = 0.0);

// ACFT helpers for 2-D / 1-D float data.
void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);
void save_vector(const std::filesystem::path& path,
                 const std::vector<double>& v);
std::vector<double> load_vector(const std::filesystem::path& path);

}  // namespace accent
