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

// Network building blocks. Every layer registers its parameters with a
// ParamRegistry under a dotted name and a parameter group, so the owning
// model can enumerate, freeze and serialize them uniformly.

#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "accent/autograd.h"

namespace accent {

using ag::Mask;
using ag::Matrix;
using ag::Var;

enum class ParamGroup {
  kTextEncoder,
  kDurationPredictor,
  kPitchEnergyPredictor,
  kSpeakerEmbedding,
  kSpeechEncoder,
  kDecoder,
};

inline constexpr ParamGroup kAllParamGroups[] = {
    ParamGroup::kTextEncoder,       ParamGroup::kDurationPredictor,
    ParamGroup::kPitchEnergyPredictor, ParamGroup::kSpeakerEmbedding,
    ParamGroup::kSpeechEncoder,     ParamGroup::kDecoder};

std::string_view to_string(ParamGroup group);
ParamGroup param_group_from_string(std::string_view name);

struct NamedParameter {
  std::string name;
  ParamGroup group;
  Var var;
};

class ParamRegistry {
 public:
  explicit ParamRegistry(std::uint64_t seed) : rng_(seed) {}

  // Xavier-uniform fan_in x fan_out matrix.
  Var weight(const std::string& name, ParamGroup group, int fan_in,
             int fan_out);
  Var zeros(const std::string& name, ParamGroup group, int rows, int cols);
  Var ones(const std::string& name, ParamGroup group, int rows, int cols);
  // Uniform in [-scale, scale].
  Var uniform(const std::string& name, ParamGroup group, int rows, int cols,
              double scale);

  std::vector<NamedParameter> release() { return std::move(params_); }

 private:
  Var add(const std::string& name, ParamGroup group, Matrix value);

  std::mt19937_64 rng_;
  std::vector<NamedParameter> params_;
};

// Dropout is active only when training; rng must then be non-null.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

Var maybe_dropout(const Var& x, double rate, const ForwardContext& ctx);

// T x d sinusoidal position table.
Matrix sinusoid_positions(Eigen::Index frames, Eigen::Index dim);

class Linear {
 public:
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, ParamGroup group,
         int in, int out);
  Var forward(const Var& x) const { return ag::linear(x, weight_, bias_); }

 private:
  Var weight_, bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& name, ParamGroup group,
            int dim);
  Var forward(const Var& x) const { return ag::layer_norm(x, gamma_, beta_); }

 private:
  Var gamma_, beta_;
};

// Same-padded 1-D convolution over time.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamRegistry& reg, const std::string& name, ParamGroup group,
         int in, int out, int kernel);
  Var forward(const Var& x) const {
    return ag::conv1d(x, weight_, bias_, kernel_);
  }

 private:
  Var weight_, bias_;
  int kernel_ = 1;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamRegistry& reg, const std::string& name,
                     ParamGroup group, int dim, int heads);

  // Scaled dot-product self-attention; padded keys receive zero weight.
  // When attention is non-null it receives one T x T matrix per head.
  Var forward(const Var& x, const Mask& mask, const ForwardContext& ctx,
              double dropout, std::vector<Matrix>* attention = nullptr) const;

 private:
  Linear q_, k_, v_, out_;
  int heads_ = 1;
  int head_dim_ = 1;
};

struct FftBlockConfig {
  int dim = 256;
  int heads = 2;
  int ffn_dim = 1024;
  int ffn_kernel = 9;
  double dropout = 0.1;
};

// Feed-forward Transformer block: masked self-attention and a two-layer
// convolutional feed-forward net, each with residual + layer norm. Padded
// rows are zeroed after both sublayers, so they never reach valid rows.
class FftBlock {
 public:
  FftBlock() = default;
  FftBlock(ParamRegistry& reg, const std::string& name, ParamGroup group,
           const FftBlockConfig& cfg);

  Var forward(const Var& x, const Mask& mask, const ForwardContext& ctx,
              std::vector<Matrix>* attention = nullptr) const;

 private:
  MultiHeadAttention attn_;
  LayerNorm attn_norm_;
  Conv1d ffn_in_, ffn_out_;
  LayerNorm ffn_norm_;
  double dropout_ = 0.0;
};

class FftStack {
 public:
  FftStack() = default;
  FftStack(ParamRegistry& reg, const std::string& name, ParamGroup group,
           int layers, const FftBlockConfig& cfg);

  Var forward(const Var& x, const Mask& mask, const ForwardContext& ctx) const;
  const std::vector<FftBlock>& blocks() const { return blocks_; }

 private:
  std::vector<FftBlock> blocks_;
};

// conv -> ReLU -> LN -> dropout, twice, then a scalar projection per row.
class VariancePredictor {
 public:
  VariancePredictor() = default;
  VariancePredictor(ParamRegistry& reg, const std::string& name,
                    ParamGroup group, int in, int hidden, int kernel,
                    double dropout);

  // Returns T x 1; padded rows are 0.
  Var forward(const Var& x, const Mask& mask, const ForwardContext& ctx) const;

 private:
  Conv1d conv1_, conv2_;
  LayerNorm norm1_, norm2_;
  Linear proj_;
  double dropout_ = 0.0;
};

// Convolutional residual refiner: n_mels -> dim (tanh) ... -> n_mels.
class PostNet {
 public:
  PostNet() = default;
  PostNet(ParamRegistry& reg, const std::string& name, ParamGroup group,
          int n_mels, int dim, int kernel, int layers, double dropout);

  Var forward(const Var& mel, const Mask& mask,
              const ForwardContext& ctx) const;

 private:
  std::vector<Conv1d> convs_;
  double dropout_ = 0.0;
};

}  // namespace accent
