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

#include "accent/inference.h"

#include <algorithm>

#include "accent/error.h"
#include "accent/util.h"

namespace accent {
namespace {

Mask full_mask(Eigen::Index n) { return Mask(static_cast<std::size_t>(n), 1); }

std::vector<double> transformed(const std::vector<double>& v,
                                double (*f)(double)) {
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), f);
  return out;
}

}  // namespace

FeatureKind checkpoint_feature_kind(const Checkpoint& ckpt) {
  for (auto it = ckpt.lineage.rbegin(); it != ckpt.lineage.rend(); ++it) {
    if (it->contains("feature_kind")) {
      return feature_kind_from_string(it->at("feature_kind").get<std::string>());
    }
  }
  return FeatureKind::kMel;
}

Converter::Converter(const Checkpoint& ckpt)
    : kind_(checkpoint_feature_kind(ckpt)), stage_(ckpt.stage) {
  if (ckpt.stage < 2) {
    throw Error("no aligned speech encoder: checkpoint is from stage " +
                std::to_string(ckpt.stage) + ", conversion needs stage 2 or 3");
  }
  model_ = std::make_unique<AccentModel>(ckpt.model, 0);
  model_->load_state_dict(ckpt.state());
  model_->set_trainable({});
}

MelSpectrogram Converter::convert(const AcousticFeatures& features,
                                  int speaker_id,
                                  const ConvertOptions& opts) const {
  if (features.source_kind != kind_) {
    throw Error("checkpoint expects " + std::string(to_string(kind_)) +
                " features, got " + std::string(to_string(features.source_kind)));
  }
  const Eigen::Index T = features.num_frames();
  if (T < 1) throw Error("convert: empty feature matrix");
  if (!features.frames.allFinite()) throw Error("convert: non-finite features");

  Var speaker;
  if (opts.speaker_vector) {
    const Matrix& v = *opts.speaker_vector;
    if (v.rows() != 1 || v.cols() != model_->config().hidden_dim) {
      throw Error("convert: external speaker vector must be 1 x " +
                  std::to_string(model_->config().hidden_dim));
    }
    speaker = Var::constant(v);
  } else {
    speaker = model_->speaker_embedding(speaker_id);
  }

  std::vector<double> pitch, energy;
  const std::vector<double>* pitch_t = nullptr;
  const std::vector<double>* energy_t = nullptr;
  if (opts.copy_prosody) {
    if (!opts.source_prosody) {
      throw Error("convert: copy_prosody needs the source prosody contours");
    }
    pitch = transformed(opts.source_prosody->pitch, pitch_to_target);
    energy = transformed(opts.source_prosody->energy, energy_to_target);
    pitch_t = &pitch;
    energy_t = &energy;
  }

  const ForwardContext eval;
  const auto out = model_->speech_branch(Var::constant(features.frames), kind_,
                                         speaker, pitch_t, energy_t, eval);
  return {out.mel.frames.value(), out.mel.before_postnet.value()};
}

double Converter::alignment_distance(const AcousticFeatures& features,
                                     const std::vector<int>& phone_ids,
                                     const std::vector<int>& durations) const {
  const ForwardContext eval;
  const Var e = model_->encode_text(
      phone_ids, full_mask(static_cast<Eigen::Index>(phone_ids.size())), eval);
  const Var ht = length_regulate(e, durations);
  const Mask mask = full_mask(features.num_frames());
  const Var hs =
      model_->encode_speech(Var::constant(features.frames), kind_, mask, eval);
  if (ht.rows() != hs.rows()) {
    throw Error("alignment distance: durations sum to " +
                std::to_string(ht.rows()) + " frames, features have " +
                std::to_string(hs.rows()));
  }
  return ag::masked_row_l2_mean(hs, ht, mask).item();
}

MelSpectrogram convert(const AcousticFeatures& features, int speaker_id,
                       const Checkpoint& ckpt, const ConvertOptions& opts) {
  return Converter(ckpt).convert(features, speaker_id, opts);
}

void export_mel(const Matrix& mel, const std::filesystem::path& path) {
  if (mel.rows() == 0 || mel.cols() == 0) {
    throw Error("export_mel: refusing to export an empty mel");
  }
  if (!mel.allFinite()) throw Error("export_mel: mel has non-finite values");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_matrix(path, mel);
}

std::filesystem::path invoke_vocoder_adapter(
    const Matrix& mel, const std::string& adapter_cmd,
    const std::filesystem::path& out_wav) {
  if (adapter_cmd.empty()) {
    throw Error("no vocoder configured (set inference.vocoder_cmd or --vocoder)");
  }
  auto mel_path = out_wav;
  mel_path.replace_extension(".mel.acft");
  export_mel(mel, mel_path);
  std::filesystem::remove(out_wav);
  const std::string cmd = expand_command(
      adapter_cmd, {{"in", mel_path.string()}, {"out", out_wav.string()}},
      {"in", "out"});
  const auto r = run_command(cmd);
  if (r.exit_code != 0) {
    throw Error("vocoder adapter exited with status " +
                std::to_string(r.exit_code) + ": " + tail_excerpt(r.err));
  }
  if (!std::filesystem::exists(out_wav)) {
    throw Error("vocoder adapter did not write " + out_wav.string());
  }
  return out_wav;
}

AcousticFeatures run_feature_adapter(const std::string& adapter_cmd,
                                     const std::filesystem::path& wav,
                                     const std::filesystem::path& out_acft,
                                     Eigen::Index target_frames,
                                     Eigen::Index expected_dim) {
  if (adapter_cmd.empty()) {
    throw Error("no pretrained-feature adapter configured (inference.feature_cmd)");
  }
  if (out_acft.has_parent_path()) {
    std::filesystem::create_directories(out_acft.parent_path());
  }
  const std::string cmd = expand_command(
      adapter_cmd, {{"in", wav.string()}, {"out", out_acft.string()}},
      {"in", "out"});
  const auto r = run_command(cmd);
  if (r.exit_code != 0) {
    throw Error("feature adapter exited with status " +
                std::to_string(r.exit_code) + ": " + tail_excerpt(r.err));
  }
  return load_pretrained_features(out_acft, target_frames, expected_dim);
}

}  // namespace accent
