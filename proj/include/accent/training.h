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

// Three-stage training:
//   1. TTS learning on the text branch (mel + duration + pitch + energy).
//   2. Speech-text alignment: the speech encoder regresses the frozen text
//      branch's length-regulated states.
//   3. Fine-tuning on accented data with the alignment loss plus an L1 loss
//      between the two branches' decoded mels.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "accent/checkpoint.h"
#include "accent/data.h"
#include "accent/model.h"

namespace accent {

enum class Schedule { kWarmup, kConstant };
enum class DatasetSelector { kNative, kAccented, kAll };

std::string_view to_string(Schedule s);
std::string_view to_string(DatasetSelector s);
DatasetSelector dataset_selector_from_string(std::string_view name);

struct StageConfig {
  int stage = 1;
  std::set<ParamGroup> trainable_groups;
  int max_steps = 100000;
  int batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  Schedule schedule = Schedule::kWarmup;
  int warmup_steps = 4000;
  double constant_lr = 1e-5;
  double lr_scale = 1.0;  // multiplies the warmup rate
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  bool use_mel_star = true;  // stage 3 only; off for the baseline ablation
  DatasetSelector dataset = DatasetSelector::kNative;
  int val_every = 1000;
  int log_every = 100;
  double grad_clip = 1.0;  // global L2 norm, <= 0 disables

  // Full-scale defaults for each stage.
  static StageConfig defaults(int stage);
  void validate() const;
};

void to_json(nlohmann::json& j, const StageConfig& c);
// Missing keys keep defaults(j["stage"]).
void from_json(const nlohmann::json& j, StageConfig& c);

struct LossBreakdown {
  double total = 0.0;
  double mel = 0.0;
  double duration = 0.0;
  double pitch = 0.0;
  double energy = 0.0;
  double emb = 0.0;
  double mel_star = 0.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

nlohmann::json to_json(const LossBreakdown& b);

// A differentiable total plus the scalar breakdown.
struct StageLoss {
  Var total;
  LossBreakdown parts;
};

// L_mel (element-mean L1 on both the pre- and post-PostNet mels, summed)
// + duration/pitch/energy MSE. Targets are in the model's domains
// (log(d+1), log-Hz with 0 for unvoiced, log1p energy).
StageLoss loss_stage1(const Var& mel_before, const Var& mel_after,
                      const Matrix& mel_target, const Var& log_duration_pred,
                      const std::vector<double>& log_duration_target,
                      const Var& pitch_pred,
                      const std::vector<double>& pitch_target,
                      const Var& energy_pred,
                      const std::vector<double>& energy_target,
                      const Mask& frame_mask, const Mask& phone_mask);

// Mean over valid frames of ||H^t_i - H^s_i||_2. H^t is detached.
StageLoss loss_stage2(const Var& speech_hidden, const Var& text_hidden,
                      const Mask& frame_mask);

// lambda1 * emb + lambda2 * mel_star, where mel_star is the mean over valid
// frames of ||M^t_i - M^s_i||_1. H^t and M^t are detached. With
// use_mel_star = false the mel term is reported but excluded from total.
StageLoss loss_stage3(const Var& speech_hidden, const Var& text_hidden,
                      const Var& speech_mel, const Var& text_mel,
                      double lambda1, double lambda2, const Mask& frame_mask,
                      bool use_mel_star = true);

// d^-0.5 * min(step^-0.5, step * warmup^-1.5). step must be >= 1.
double lr_schedule(std::int64_t step, int warmup_steps, int hidden_dim);
// Rate for a stage config: warmup (scaled) or the constant rate.
double stage_lr(const StageConfig& cfg, std::int64_t step, int hidden_dim);

class Adam {
 public:
  Adam(std::vector<NamedParameter> params, double beta1, double beta2,
       double epsilon);

  // Updates every parameter that requires a gradient; others are untouched.
  void step(double lr);
  std::int64_t steps() const { return t_; }

 private:
  std::vector<NamedParameter> params_;
  std::vector<Matrix> m_, v_;
  double beta1_, beta2_, epsilon_;
  std::int64_t t_ = 0;
};

// Scales all present gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(const std::vector<NamedParameter>& params,
                      double max_norm);

// Frozen text-branch outputs for one utterance: H^t (length-regulated
// phone states) and M^t (decoded mel with predicted pitch/energy).
struct TeacherTargets {
  Matrix hidden;
  Matrix mel;
};
using TeacherCache = std::map<std::string, TeacherTargets>;

// Eval-mode teacher with ground-truth durations. The mel is only decoded
// when with_mel is set (stage 3).
TeacherTargets compute_teacher(const AccentModel& model, const Example& ex,
                               bool with_mel);
TeacherCache build_teacher_cache(const AccentModel& model,
                                 const std::vector<Example>& examples,
                                 bool with_mel);

// Forward pass of one stage's loss over a set of examples, treated as a
// single batch (losses are means over all valid frames/phones). ctx drives
// dropout in the trained groups; frozen blocks always run in eval mode in
// stages 2 and 3. Teacher targets are taken from cache when present.
StageLoss stage_loss(const StageConfig& cfg, const AccentModel& model,
                     const std::vector<const Example*>& batch,
                     FeatureKind kind, const ForwardContext& ctx,
                     const TeacherCache* cache = nullptr);

// Eval-mode loss over a dataset in chunks of batch_size, weighted by frames.
LossBreakdown evaluate_stage(const StageConfig& cfg, const AccentModel& model,
                             const std::vector<Example>& examples,
                             FeatureKind kind,
                             const TeacherCache* cache = nullptr);

std::vector<Example> select_examples(const std::vector<Example>& examples,
                                     DatasetSelector selector);

// Sets energy_min/energy_max to the log1p range of the examples' energy.
void fit_energy_range(const std::vector<Example>& examples, ModelConfig& cfg);

struct RunStageOptions {
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  FeatureKind feature_kind = FeatureKind::kMel;
  nlohmann::json config_echo = nlohmann::json::object();
  // Stage 2 needs a stage-1 checkpoint, stage 3 a stage-2 one (or stage 1
  // with allow_skip_stage2).
  const Checkpoint* init = nullptr;
  bool allow_skip_stage2 = false;
  // Called with every log record as it is written.
  std::function<void(const nlohmann::json&)> on_log;
};

struct StageResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log_path;
  std::vector<nlohmann::json> log;
  LossBreakdown final_val;
};

// Trains cfg.trainable_groups of model for cfg.max_steps. Writes
// stage<k>_log.jsonl, stage<k>_best.ckpt and stage<k>_last.ckpt into out_dir.
// Throws on a missing/mismatched prerequisite checkpoint and aborts on a
// non-finite loss, reporting the step.
StageResult run_stage(const StageConfig& cfg, AccentModel& model,
                      const std::vector<Example>& train,
                      const std::vector<Example>& val,
                      const RunStageOptions& opts);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[index] analytic A numeric N"
  std::size_t checked = 0;
};

// Compares analytic gradients of loss_fn with central differences over
// every entry of every parameter (or at most max_entries per parameter).
// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult gradient_check(const std::function<Var()>& loss_fn,
                               const std::vector<NamedParameter>& params,
                               double eps = 1e-6, double floor = 1e-6,
                               std::size_t max_entries = 0);

}  // namespace accent
