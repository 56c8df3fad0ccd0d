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

// The accent-conversion network: a FastSpeech2-style text branch (phone
// encoder, duration predictor, length regulator), a speech encoder over
// acoustic features, and the shared speaker/variance/decoder tail.
//
// All sequences are processed one utterance at a time (T x d matrices) with
// an optional row mask, so padded batches and trimmed sequences go through
// the same code.

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent/features.h"
#include "accent/layers.h"

namespace accent {

struct ModelConfig {
  int hidden_dim = 256;
  int heads = 4;
  int encoder_layers = 4;         // text encoder
  int speech_encoder_layers = 4;  // after the PreNet
  int decoder_layers = 4;
  int ffn_dim = 1024;
  int ffn_kernel = 9;
  double dropout = 0.1;

  int predictor_hidden = 256;
  int predictor_kernel = 3;
  double predictor_dropout = 0.5;

  int postnet_dim = 512;
  int postnet_kernel = 5;
  int postnet_layers = 5;

  int n_phones = 42;
  int n_speakers = 1;
  int n_mels = 80;
  int pretrained_dim = 512;

  // Pitch bins: bin 0 holds unvoiced frames; bins 1..n-1 split
  // [log pitch_min, log pitch_max] evenly. Energy bins split
  // [energy_min, energy_max] (log1p domain) evenly.
  int n_bins = 256;
  double pitch_min_hz = 60.0;
  double pitch_max_hz = 400.0;
  double energy_min = 0.0;
  double energy_max = 8.0;

  void validate() const;
  FftBlockConfig block(int dim) const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Target transforms shared by the losses, the quantizers and inference.
double pitch_to_target(double hz);       // log(hz), 0 when unvoiced
double energy_to_target(double energy);  // log1p(energy)
double duration_to_target(int frames);   // log(frames + 1)
// round(exp(pred) - 1), clamped at 0.
int duration_from_prediction(double pred);

// Index of the bin a value falls into; a value exactly on an edge goes to
// the lower bin.
int quantize(double value, const std::vector<double>& edges);

struct VarianceOutput {
  Var hidden;        // T x d, speaker- and prosody-enriched
  Var pitch_pred;    // T x 1, log-Hz domain
  Var energy_pred;   // T x 1, log1p domain
  std::vector<int> pitch_bins;
  std::vector<int> energy_bins;
};

struct MelOutput {
  Var before_postnet;  // T x n_mels
  Var frames;          // before_postnet + PostNet residual
};

struct TextBranchOutput {
  Var phone_hidden;     // N x d (E^l)
  Var log_durations;    // N x 1
  Var frame_hidden;     // T x d (H^l, the alignment target H^t)
  VarianceOutput variance;
  MelOutput mel;
};

struct SpeechBranchOutput {
  Var frame_hidden;  // T x d (H^s)
  VarianceOutput variance;
  MelOutput mel;
};

// Row-repeats e: row i appears durations[i] times.
// Throws "empty regulated sequence" when the durations sum to zero.
Var length_regulate(const Var& e, const std::vector<int>& durations);

class AccentModel {
 public:
  AccentModel(const ModelConfig& cfg, std::uint64_t seed);

  AccentModel(const AccentModel&) = delete;
  AccentModel& operator=(const AccentModel&) = delete;

  const ModelConfig& config() const { return cfg_; }

  // Phone IDs -> N x d. Throws for IDs outside the inventory.
  Var encode_text(const std::vector<int>& phone_ids, const Mask& mask,
                  const ForwardContext& ctx) const;
  // N x 1 predictions of log(duration + 1).
  Var predict_log_durations(const Var& phone_hidden, const Mask& mask,
                            const ForwardContext& ctx) const;

  // A (T x D) -> H^s (T x d), using the PreNet for kind.
  // Throws when D does not match the configured width for kind.
  Var encode_speech(const Var& features, FeatureKind kind, const Mask& mask,
                    const ForwardContext& ctx) const;

  // 1 x d row of the speaker table. Throws for unknown IDs.
  Var speaker_embedding(int speaker_id) const;

  // Adds the speaker vector, predicts pitch/energy from the result, then adds
  // the embeddings of the quantized targets (when given, in the model's
  // log domains) or of the predictions.
  VarianceOutput variance_adapt(const Var& hidden, const Var& speaker,
                                const Mask& mask,
                                const std::vector<double>* pitch_target,
                                const std::vector<double>* energy_target,
                                const ForwardContext& ctx) const;

  MelOutput decode(const Var& hidden, const Mask& mask,
                   const ForwardContext& ctx) const;

  // Full text branch with teacher-forced durations (and prosody when given).
  TextBranchOutput text_branch(const std::vector<int>& phone_ids,
                               const std::vector<int>& durations,
                               int speaker_id,
                               const std::vector<double>* pitch_target,
                               const std::vector<double>* energy_target,
                               const ForwardContext& ctx) const;

  // Speech branch on an unpadded T x D feature matrix; pitch/energy come
  // from the predictors unless targets are supplied.
  SpeechBranchOutput speech_branch(const Var& features, FeatureKind kind,
                                   const Var& speaker,
                                   const std::vector<double>* pitch_target,
                                   const std::vector<double>* energy_target,
                                   const ForwardContext& ctx) const;

  const std::vector<double>& pitch_edges() const { return pitch_edges_; }
  const std::vector<double>& energy_edges() const { return energy_edges_; }

  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<NamedParameter> parameters(ParamGroup group) const;
  std::size_t num_parameters() const;

  // Enables gradients for exactly the listed groups.
  void set_trainable(const std::set<ParamGroup>& groups);
  std::set<ParamGroup> trainable_groups() const;
  void zero_grad();

  std::map<std::string, Matrix> state_dict() const;
  // Every parameter must be present with a matching shape.
  void load_state_dict(const std::map<std::string, Matrix>& state);

 private:
  ModelConfig cfg_;
  std::vector<NamedParameter> params_;

  Var phone_table_;
  FftStack text_stack_;
  VariancePredictor duration_;

  Linear prenet_mel_, prenet_pretrained_;
  FftStack speech_stack_;

  Var speaker_table_;

  VariancePredictor pitch_, energy_;
  Var pitch_table_, energy_table_;
  std::vector<double> pitch_edges_, energy_edges_;

  FftStack decoder_stack_;
  Linear mel_proj_;
  PostNet postnet_;
};

}  // namespace accent
