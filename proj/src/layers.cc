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

#include "accent/layers.h"

#include <cmath>

#include "accent/error.h"
#include "accent/random.h"

namespace accent {

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kTextEncoder:
      return "text_encoder";
    case ParamGroup::kDurationPredictor:
      return "length_regulator_predictors";
    case ParamGroup::kPitchEnergyPredictor:
      return "pitch_energy_predictor";
    case ParamGroup::kSpeakerEmbedding:
      return "speaker_embedding";
    case ParamGroup::kSpeechEncoder:
      return "speech_encoder";
    case ParamGroup::kDecoder:
      return "decoder";
  }
  return "?";
}

ParamGroup param_group_from_string(std::string_view name) {
  for (auto g : kAllParamGroups) {
    if (to_string(g) == name) return g;
  }
  throw Error("unknown parameter group '" + std::string(name) + "'");
}

Var ParamRegistry::add(const std::string& name, ParamGroup group,
                       Matrix value) {
  for (const auto& p : params_) {
    if (p.name == name) throw Error("duplicate parameter name " + name);
  }
  Var v = Var::leaf(std::move(value), true);
  params_.push_back({name, group, v});
  return v;
}

Var ParamRegistry::uniform(const std::string& name, ParamGroup group, int rows,
                           int cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = (2.0 * uniform01(rng_) - 1.0) * scale;
  }
  return add(name, group, std::move(m));
}

Var ParamRegistry::weight(const std::string& name, ParamGroup group,
                          int fan_in, int fan_out) {
  return uniform(name, group, fan_in, fan_out,
                 std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

Var ParamRegistry::zeros(const std::string& name, ParamGroup group, int rows,
                         int cols) {
  return add(name, group, Matrix::Zero(rows, cols));
}

Var ParamRegistry::ones(const std::string& name, ParamGroup group, int rows,
                        int cols) {
  return add(name, group, Matrix::Ones(rows, cols));
}

Var maybe_dropout(const Var& x, double rate, const ForwardContext& ctx) {
  if (!ctx.training || rate <= 0.0) return x;
  if (!ctx.rng) throw Error("training forward pass needs an rng");
  return ag::dropout(x, rate, *ctx.rng);
}

Matrix sinusoid_positions(Eigen::Index frames, Eigen::Index dim) {
  Matrix pe(frames, dim);
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -2.0 * static_cast<double>(i / 2) /
                                static_cast<double>(dim));
      const double angle = static_cast<double>(t) * rate;
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Linear::Linear(ParamRegistry& reg, const std::string& name, ParamGroup group,
               int in, int out)
    : weight_(reg.weight(name + ".weight", group, in, out)),
      bias_(reg.zeros(name + ".bias", group, 1, out)) {}

LayerNorm::LayerNorm(ParamRegistry& reg, const std::string& name,
                     ParamGroup group, int dim)
    : gamma_(reg.ones(name + ".gamma", group, 1, dim)),
      beta_(reg.zeros(name + ".beta", group, 1, dim)) {}

Conv1d::Conv1d(ParamRegistry& reg, const std::string& name, ParamGroup group,
               int in, int out, int kernel)
    : weight_(reg.weight(name + ".weight", group, in * kernel, out)),
      bias_(reg.zeros(name + ".bias", group, 1, out)),
      kernel_(kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw Error(name + ": conv kernel must be odd");
  }
}

MultiHeadAttention::MultiHeadAttention(ParamRegistry& reg,
                                       const std::string& name,
                                       ParamGroup group, int dim, int heads)
    : q_(reg, name + ".q", group, dim, dim),
      k_(reg, name + ".k", group, dim, dim),
      v_(reg, name + ".v", group, dim, dim),
      out_(reg, name + ".out", group, dim, dim),
      heads_(heads),
      head_dim_(dim / heads) {
  if (heads < 1 || dim % heads != 0) {
    throw Error(name + ": hidden dim must be divisible by heads");
  }
}

Var MultiHeadAttention::forward(const Var& x, const Mask& mask,
                                const ForwardContext& ctx, double dropout,
                                std::vector<Matrix>* attention) const {
  const Var q = q_.forward(x);
  const Var k = k_.forward(x);
  const Var v = v_.forward(x);
  const double temperature = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  std::vector<Var> heads;
  heads.reserve(heads_);
  if (attention) attention->clear();
  for (int h = 0; h < heads_; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * head_dim_;
    const Var qh = ag::slice_cols(q, off, head_dim_);
    const Var kh = ag::slice_cols(k, off, head_dim_);
    const Var vh = ag::slice_cols(v, off, head_dim_);
    Var weights =
        ag::masked_softmax(ag::scale(ag::matmul_nt(qh, kh), temperature), mask);
    if (attention) attention->push_back(weights.value());
    weights = maybe_dropout(weights, dropout, ctx);
    heads.push_back(ag::matmul(weights, vh));
  }
  const Var merged = heads_ == 1 ? heads.front() : ag::concat_cols(heads);
  return out_.forward(merged);
}

FftBlock::FftBlock(ParamRegistry& reg, const std::string& name,
                   ParamGroup group, const FftBlockConfig& cfg)
    : attn_(reg, name + ".attn", group, cfg.dim, cfg.heads),
      attn_norm_(reg, name + ".attn_norm", group, cfg.dim),
      ffn_in_(reg, name + ".ffn_in", group, cfg.dim, cfg.ffn_dim,
              cfg.ffn_kernel),
      ffn_out_(reg, name + ".ffn_out", group, cfg.ffn_dim, cfg.dim, 1),
      ffn_norm_(reg, name + ".ffn_norm", group, cfg.dim),
      dropout_(cfg.dropout) {}

Var FftBlock::forward(const Var& x, const Mask& mask, const ForwardContext& ctx,
                      std::vector<Matrix>* attention) const {
  Var a = attn_.forward(x, mask, ctx, dropout_, attention);
  a = maybe_dropout(a, dropout_, ctx);
  const Var h = ag::mask_rows(attn_norm_.forward(a + x), mask);

  Var f = ffn_out_.forward(ag::relu(ffn_in_.forward(h)));
  f = maybe_dropout(f, dropout_, ctx);
  return ag::mask_rows(ffn_norm_.forward(f + h), mask);
}

FftStack::FftStack(ParamRegistry& reg, const std::string& name,
                   ParamGroup group, int layers, const FftBlockConfig& cfg) {
  blocks_.reserve(layers);
  for (int i = 0; i < layers; ++i) {
    blocks_.emplace_back(reg, name + ".block" + std::to_string(i), group, cfg);
  }
}

Var FftStack::forward(const Var& x, const Mask& mask,
                      const ForwardContext& ctx) const {
  Var h = x;
  for (const auto& b : blocks_) h = b.forward(h, mask, ctx);
  return h;
}

VariancePredictor::VariancePredictor(ParamRegistry& reg,
                                     const std::string& name, ParamGroup group,
                                     int in, int hidden, int kernel,
                                     double dropout)
    : conv1_(reg, name + ".conv1", group, in, hidden, kernel),
      conv2_(reg, name + ".conv2", group, hidden, hidden, kernel),
      norm1_(reg, name + ".norm1", group, hidden),
      norm2_(reg, name + ".norm2", group, hidden),
      proj_(reg, name + ".proj", group, hidden, 1),
      dropout_(dropout) {}

Var VariancePredictor::forward(const Var& x, const Mask& mask,
                               const ForwardContext& ctx) const {
  Var h = ag::mask_rows(x, mask);
  h = maybe_dropout(norm1_.forward(ag::relu(conv1_.forward(h))), dropout_, ctx);
  h = ag::mask_rows(h, mask);
  h = maybe_dropout(norm2_.forward(ag::relu(conv2_.forward(h))), dropout_, ctx);
  return ag::mask_rows(proj_.forward(h), mask);
}

PostNet::PostNet(ParamRegistry& reg, const std::string& name, ParamGroup group,
                 int n_mels, int dim, int kernel, int layers, double dropout)
    : dropout_(dropout) {
  if (layers < 2) throw Error(name + ": postnet needs at least 2 layers");
  for (int i = 0; i < layers; ++i) {
    const int in = i == 0 ? n_mels : dim;
    const int out = i == layers - 1 ? n_mels : dim;
    convs_.emplace_back(reg, name + ".conv" + std::to_string(i), group, in,
                        out, kernel);
  }
}

Var PostNet::forward(const Var& mel, const Mask& mask,
                     const ForwardContext& ctx) const {
  Var h = ag::mask_rows(mel, mask);
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i].forward(h);
    if (i + 1 < convs_.size()) h = ag::tanh(h);
    h = ag::mask_rows(maybe_dropout(h, dropout_, ctx), mask);
  }
  return h;
}

}  // namespace accent
