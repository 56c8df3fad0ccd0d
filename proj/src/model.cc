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

#include "accent/model.h"

#include <algorithm>
#include <cmath>

#include "accent/error.h"

namespace accent {
namespace {

Mask full_mask(Eigen::Index n) { return Mask(static_cast<std::size_t>(n), 1); }

void check_mask(const Mask& mask, Eigen::Index rows, const char* what) {
  if (static_cast<Eigen::Index>(mask.size()) != rows) {
    throw Error(std::string(what) + ": mask length " +
                std::to_string(mask.size()) + " != sequence length " +
                std::to_string(rows));
  }
}

Var add_positions(const Var& x) {
  return x + Var::constant(sinusoid_positions(x.rows(), x.cols()));
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out[i] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw Error(std::string("model config: ") + name + " must be >= 1");
  };
  positive(hidden_dim, "hidden_dim");
  positive(heads, "heads");
  positive(encoder_layers, "encoder_layers");
  positive(speech_encoder_layers, "speech_encoder_layers");
  positive(decoder_layers, "decoder_layers");
  positive(ffn_dim, "ffn_dim");
  positive(predictor_hidden, "predictor_hidden");
  positive(postnet_dim, "postnet_dim");
  positive(n_phones, "n_phones");
  positive(n_speakers, "n_speakers");
  positive(n_mels, "n_mels");
  positive(pretrained_dim, "pretrained_dim");
  if (hidden_dim % heads != 0) {
    throw Error("model config: hidden_dim must be divisible by heads");
  }
  if (n_bins < 3) throw Error("model config: n_bins must be >= 3");
  if (postnet_layers < 2) throw Error("model config: postnet_layers must be >= 2");
  if (!(pitch_min_hz > 0.0 && pitch_min_hz < pitch_max_hz)) {
    throw Error("model config: need 0 < pitch_min_hz < pitch_max_hz");
  }
  if (!(energy_min < energy_max)) {
    throw Error("model config: need energy_min < energy_max");
  }
  if (dropout < 0.0 || dropout >= 1.0 || predictor_dropout < 0.0 ||
      predictor_dropout >= 1.0) {
    throw Error("model config: dropout must be in [0, 1)");
  }
}

FftBlockConfig ModelConfig::block(int dim) const {
  return {dim, heads, ffn_dim, ffn_kernel, dropout};
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"hidden_dim", c.hidden_dim},
       {"heads", c.heads},
       {"encoder_layers", c.encoder_layers},
       {"speech_encoder_layers", c.speech_encoder_layers},
       {"decoder_layers", c.decoder_layers},
       {"ffn_dim", c.ffn_dim},
       {"ffn_kernel", c.ffn_kernel},
       {"dropout", c.dropout},
       {"predictor_hidden", c.predictor_hidden},
       {"predictor_kernel", c.predictor_kernel},
       {"predictor_dropout", c.predictor_dropout},
       {"postnet_dim", c.postnet_dim},
       {"postnet_kernel", c.postnet_kernel},
       {"postnet_layers", c.postnet_layers},
       {"n_phones", c.n_phones},
       {"n_speakers", c.n_speakers},
       {"n_mels", c.n_mels},
       {"pretrained_dim", c.pretrained_dim},
       {"n_bins", c.n_bins},
       {"pitch_min_hz", c.pitch_min_hz},
       {"pitch_max_hz", c.pitch_max_hz},
       {"energy_min", c.energy_min},
       {"energy_max", c.energy_max}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.heads = j.value("heads", d.heads);
  c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
  c.speech_encoder_layers =
      j.value("speech_encoder_layers", d.speech_encoder_layers);
  c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.ffn_kernel = j.value("ffn_kernel", d.ffn_kernel);
  c.dropout = j.value("dropout", d.dropout);
  c.predictor_hidden = j.value("predictor_hidden", d.predictor_hidden);
  c.predictor_kernel = j.value("predictor_kernel", d.predictor_kernel);
  c.predictor_dropout = j.value("predictor_dropout", d.predictor_dropout);
  c.postnet_dim = j.value("postnet_dim", d.postnet_dim);
  c.postnet_kernel = j.value("postnet_kernel", d.postnet_kernel);
  c.postnet_layers = j.value("postnet_layers", d.postnet_layers);
  c.n_phones = j.value("n_phones", d.n_phones);
  c.n_speakers = j.value("n_speakers", d.n_speakers);
  c.n_mels = j.value("n_mels", d.n_mels);
  c.pretrained_dim = j.value("pretrained_dim", d.pretrained_dim);
  c.n_bins = j.value("n_bins", d.n_bins);
  c.pitch_min_hz = j.value("pitch_min_hz", d.pitch_min_hz);
  c.pitch_max_hz = j.value("pitch_max_hz", d.pitch_max_hz);
  c.energy_min = j.value("energy_min", d.energy_min);
  c.energy_max = j.value("energy_max", d.energy_max);
}

double pitch_to_target(double hz) { return hz > 0.0 ? std::log(hz) : 0.0; }
double energy_to_target(double energy) {
  return std::log1p(std::max(energy, 0.0));
}
double duration_to_target(int frames) {
  return std::log(static_cast<double>(frames) + 1.0);
}
int duration_from_prediction(double pred) {
  const double d = std::round(std::exp(pred) - 1.0);
  return d > 0.0 ? static_cast<int>(d) : 0;
}

int quantize(double value, const std::vector<double>& edges) {
  return static_cast<int>(std::lower_bound(edges.begin(), edges.end(), value) -
                          edges.begin());
}

Var length_regulate(const Var& e, const std::vector<int>& durations) {
  if (static_cast<Eigen::Index>(durations.size()) != e.rows()) {
    throw Error("length_regulate: " + std::to_string(durations.size()) +
                " durations for " + std::to_string(e.rows()) + " phones");
  }
  std::vector<int> index;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    if (durations[i] < 0) throw Error("length_regulate: negative duration");
    index.insert(index.end(), static_cast<std::size_t>(durations[i]),
                 static_cast<int>(i));
  }
  if (index.empty()) throw Error("empty regulated sequence");
  return ag::gather_rows(e, index);
}

AccentModel::AccentModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  ParamRegistry reg(seed);
  const int d = cfg_.hidden_dim;
  const auto block = cfg_.block(d);

  phone_table_ =
      reg.weight("text_encoder.phone_table", ParamGroup::kTextEncoder,
                 cfg_.n_phones, d);
  text_stack_ = FftStack(reg, "text_encoder.fft", ParamGroup::kTextEncoder,
                         cfg_.encoder_layers, block);
  duration_ = VariancePredictor(reg, "duration_predictor",
                                ParamGroup::kDurationPredictor, d,
                                cfg_.predictor_hidden, cfg_.predictor_kernel,
                                cfg_.predictor_dropout);

  prenet_mel_ = Linear(reg, "speech_encoder.prenet_mel",
                       ParamGroup::kSpeechEncoder, cfg_.n_mels, d);
  prenet_pretrained_ =
      Linear(reg, "speech_encoder.prenet_pretrained",
             ParamGroup::kSpeechEncoder, cfg_.pretrained_dim, d);
  speech_stack_ = FftStack(reg, "speech_encoder.fft",
                           ParamGroup::kSpeechEncoder,
                           cfg_.speech_encoder_layers, block);

  speaker_table_ = reg.weight("speaker_embedding.table",
                              ParamGroup::kSpeakerEmbedding, cfg_.n_speakers, d);

  pitch_ = VariancePredictor(reg, "pitch_predictor",
                             ParamGroup::kPitchEnergyPredictor, d,
                             cfg_.predictor_hidden, cfg_.predictor_kernel,
                             cfg_.predictor_dropout);
  energy_ = VariancePredictor(reg, "energy_predictor",
                              ParamGroup::kPitchEnergyPredictor, d,
                              cfg_.predictor_hidden, cfg_.predictor_kernel,
                              cfg_.predictor_dropout);
  pitch_table_ = reg.weight("pitch_predictor.bin_table",
                            ParamGroup::kPitchEnergyPredictor, cfg_.n_bins, d);
  energy_table_ = reg.weight("energy_predictor.bin_table",
                             ParamGroup::kPitchEnergyPredictor, cfg_.n_bins, d);
  pitch_edges_ = linspace(std::log(cfg_.pitch_min_hz),
                          std::log(cfg_.pitch_max_hz), cfg_.n_bins - 2);
  energy_edges_ = linspace(cfg_.energy_min, cfg_.energy_max, cfg_.n_bins - 1);

  decoder_stack_ = FftStack(reg, "decoder.fft", ParamGroup::kDecoder,
                            cfg_.decoder_layers, block);
  mel_proj_ = Linear(reg, "decoder.mel_proj", ParamGroup::kDecoder, d,
                     cfg_.n_mels);
  postnet_ = PostNet(reg, "decoder.postnet", ParamGroup::kDecoder, cfg_.n_mels,
                     cfg_.postnet_dim, cfg_.postnet_kernel,
                     cfg_.postnet_layers, cfg_.dropout);

  params_ = reg.release();
}

Var AccentModel::encode_text(const std::vector<int>& phone_ids,
                             const Mask& mask,
                             const ForwardContext& ctx) const {
  if (phone_ids.empty()) throw Error("encode_text: empty phone sequence");
  check_mask(mask, static_cast<Eigen::Index>(phone_ids.size()), "encode_text");
  for (int id : phone_ids) {
    if (id < 0 || id >= cfg_.n_phones) {
      throw Error("phone id " + std::to_string(id) + " out of range [0, " +
                  std::to_string(cfg_.n_phones) + ")");
    }
  }
  const Var x = add_positions(ag::gather_rows(phone_table_, phone_ids));
  return text_stack_.forward(x, mask, ctx);
}

Var AccentModel::predict_log_durations(const Var& phone_hidden,
                                       const Mask& mask,
                                       const ForwardContext& ctx) const {
  return duration_.forward(phone_hidden, mask, ctx);
}

Var AccentModel::encode_speech(const Var& features, FeatureKind kind,
                               const Mask& mask,
                               const ForwardContext& ctx) const {
  const int expected =
      kind == FeatureKind::kMel ? cfg_.n_mels : cfg_.pretrained_dim;
  if (features.cols() != expected) {
    throw Error("speech encoder: " + std::string(to_string(kind)) +
                " features have dim " + std::to_string(features.cols()) +
                ", expected " + std::to_string(expected));
  }
  if (features.rows() < 1) throw Error("speech encoder: empty input");
  check_mask(mask, features.rows(), "encode_speech");
  const Linear& prenet =
      kind == FeatureKind::kMel ? prenet_mel_ : prenet_pretrained_;
  return speech_stack_.forward(add_positions(prenet.forward(features)), mask,
                               ctx);
}

Var AccentModel::speaker_embedding(int speaker_id) const {
  if (speaker_id < 0 || speaker_id >= cfg_.n_speakers) {
    throw Error("unknown speaker id " + std::to_string(speaker_id) + " (model has " +
                std::to_string(cfg_.n_speakers) + " speakers)");
  }
  const int idx[] = {speaker_id};
  return ag::gather_rows(speaker_table_, idx);
}

VarianceOutput AccentModel::variance_adapt(
    const Var& hidden, const Var& speaker, const Mask& mask,
    const std::vector<double>* pitch_target,
    const std::vector<double>* energy_target,
    const ForwardContext& ctx) const {
  const Eigen::Index T = hidden.rows();
  check_mask(mask, T, "variance_adapt");
  if (speaker.rows() != 1 || speaker.cols() != hidden.cols()) {
    throw Error("variance_adapt: speaker embedding must be 1 x d");
  }
  auto check_len = [T](const std::vector<double>* v, const char* what) {
    if (v && static_cast<Eigen::Index>(v->size()) != T) {
      throw Error(std::string("variance_adapt: ") + what + " target length " +
                  std::to_string(v->size()) + " != " + std::to_string(T));
    }
  };
  check_len(pitch_target, "pitch");
  check_len(energy_target, "energy");

  VarianceOutput out;
  const Var h = ag::mask_rows(ag::add_row(hidden, speaker), mask);
  out.pitch_pred = pitch_.forward(h, mask, ctx);
  out.energy_pred = energy_.forward(h, mask, ctx);

  const double voiced_floor = 0.5 * std::log(cfg_.pitch_min_hz);
  out.pitch_bins.assign(static_cast<std::size_t>(T), -1);
  out.energy_bins.assign(static_cast<std::size_t>(T), -1);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!mask[t]) continue;
    const double p = pitch_target ? (*pitch_target)[t] : out.pitch_pred.value()(t, 0);
    const double e =
        energy_target ? (*energy_target)[t] : out.energy_pred.value()(t, 0);
    out.pitch_bins[t] = p <= voiced_floor ? 0 : 1 + quantize(p, pitch_edges_);
    out.energy_bins[t] = quantize(e, energy_edges_);
  }
  out.hidden = h + ag::gather_rows(pitch_table_, out.pitch_bins) +
               ag::gather_rows(energy_table_, out.energy_bins);
  return out;
}

MelOutput AccentModel::decode(const Var& hidden, const Mask& mask,
                              const ForwardContext& ctx) const {
  check_mask(mask, hidden.rows(), "decode");
  const Var h = decoder_stack_.forward(add_positions(hidden), mask, ctx);
  MelOutput out;
  out.before_postnet = ag::mask_rows(mel_proj_.forward(h), mask);
  out.frames = out.before_postnet + postnet_.forward(out.before_postnet, mask, ctx);
  return out;
}

TextBranchOutput AccentModel::text_branch(
    const std::vector<int>& phone_ids, const std::vector<int>& durations,
    int speaker_id, const std::vector<double>* pitch_target,
    const std::vector<double>* energy_target,
    const ForwardContext& ctx) const {
  TextBranchOutput out;
  const Mask phone_mask = full_mask(static_cast<Eigen::Index>(phone_ids.size()));
  out.phone_hidden = encode_text(phone_ids, phone_mask, ctx);
  out.log_durations = predict_log_durations(out.phone_hidden, phone_mask, ctx);
  std::vector<int> used = durations;
  if (used.empty()) {
    used.resize(phone_ids.size());
    for (std::size_t i = 0; i < used.size(); ++i) {
      used[i] = duration_from_prediction(out.log_durations.value()(i, 0));
    }
  }
  out.frame_hidden = length_regulate(out.phone_hidden, used);
  const Mask frame_mask = full_mask(out.frame_hidden.rows());
  out.variance = variance_adapt(out.frame_hidden, speaker_embedding(speaker_id),
                                frame_mask, pitch_target, energy_target, ctx);
  out.mel = decode(out.variance.hidden, frame_mask, ctx);
  return out;
}

SpeechBranchOutput AccentModel::speech_branch(
    const Var& features, FeatureKind kind, const Var& speaker,
    const std::vector<double>* pitch_target,
    const std::vector<double>* energy_target,
    const ForwardContext& ctx) const {
  SpeechBranchOutput out;
  const Mask mask = full_mask(features.rows());
  out.frame_hidden = encode_speech(features, kind, mask, ctx);
  out.variance = variance_adapt(out.frame_hidden, speaker, mask, pitch_target,
                                energy_target, ctx);
  out.mel = decode(out.variance.hidden, mask, ctx);
  return out;
}

std::vector<NamedParameter> AccentModel::parameters(ParamGroup group) const {
  std::vector<NamedParameter> out;
  for (const auto& p : params_) {
    if (p.group == group) out.push_back(p);
  }
  return out;
}

std::size_t AccentModel::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

void AccentModel::set_trainable(const std::set<ParamGroup>& groups) {
  for (auto& p : params_) {
    Var v = p.var;
    v.set_requires_grad(groups.count(p.group) > 0);
  }
}

std::set<ParamGroup> AccentModel::trainable_groups() const {
  std::set<ParamGroup> out;
  for (const auto& p : params_) {
    if (p.var.requires_grad()) out.insert(p.group);
  }
  return out;
}

void AccentModel::zero_grad() {
  for (auto& p : params_) {
    Var v = p.var;
    v.zero_grad();
  }
}

std::map<std::string, Matrix> AccentModel::state_dict() const {
  std::map<std::string, Matrix> out;
  for (const auto& p : params_) out.emplace(p.name, p.var.value());
  return out;
}

void AccentModel::load_state_dict(const std::map<std::string, Matrix>& state) {
  for (auto& p : params_) {
    const auto it = state.find(p.name);
    if (it == state.end()) throw Error("checkpoint lacks parameter " + p.name);
    if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
      throw Error("checkpoint shape mismatch for " + p.name);
    }
    Var v = p.var;
    v.mutable_value() = it->second;
  }
}

}  // namespace accent
