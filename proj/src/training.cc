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

#include "accent/training.h"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <limits>

#include <spdlog/spdlog.h>

#include "accent/error.h"
#include "accent/random.h"

namespace accent {
namespace {

Mask full_mask(Eigen::Index n) { return Mask(static_cast<std::size_t>(n), 1); }

Var column(const std::vector<double>& v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return Var::constant(std::move(m));
}

void check_rows(const Var& a, Eigen::Index rows, const char* what) {
  if (a.rows() != rows) {
    throw Error(std::string(what) + ": length mismatch (" +
                std::to_string(a.rows()) + " vs " + std::to_string(rows) + ")");
  }
}

void check_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(what) + ": shape mismatch (" +
                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()) + ")");
  }
}

std::set<ParamGroup> groups_except_speech() {
  std::set<ParamGroup> out(std::begin(kAllParamGroups),
                           std::end(kAllParamGroups));
  out.erase(ParamGroup::kSpeechEncoder);
  return out;
}

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.total) && std::isfinite(b.mel) &&
         std::isfinite(b.duration) && std::isfinite(b.pitch) &&
         std::isfinite(b.energy) && std::isfinite(b.emb) &&
         std::isfinite(b.mel_star);
}

LossBreakdown& accumulate(LossBreakdown& acc, const LossBreakdown& b,
                          double w) {
  acc.total += w * b.total;
  acc.mel += w * b.mel;
  acc.duration += w * b.duration;
  acc.pitch += w * b.pitch;
  acc.energy += w * b.energy;
  acc.emb += w * b.emb;
  acc.mel_star += w * b.mel_star;
  acc.lambda1 = b.lambda1;
  acc.lambda2 = b.lambda2;
  return acc;
}

std::vector<double> transformed(const std::vector<double>& v,
                                double (*f)(double)) {
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), f);
  return out;
}

}  // namespace

std::string_view to_string(Schedule s) {
  return s == Schedule::kWarmup ? "warmup" : "constant";
}

std::string_view to_string(DatasetSelector s) {
  switch (s) {
    case DatasetSelector::kNative:
      return "native";
    case DatasetSelector::kAccented:
      return "accented";
    case DatasetSelector::kAll:
      return "all";
  }
  return "?";
}

DatasetSelector dataset_selector_from_string(std::string_view name) {
  if (name == "native") return DatasetSelector::kNative;
  if (name == "accented") return DatasetSelector::kAccented;
  if (name == "all") return DatasetSelector::kAll;
  throw Error("unknown dataset selector '" + std::string(name) + "'");
}

StageConfig StageConfig::defaults(int stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case 1:
      c.trainable_groups = groups_except_speech();
      c.max_steps = 100000;
      c.dataset = DatasetSelector::kNative;
      break;
    case 2:
      c.trainable_groups = {ParamGroup::kSpeechEncoder};
      c.max_steps = 200000;
      c.dataset = DatasetSelector::kNative;
      break;
    case 3:
      c.trainable_groups = {ParamGroup::kSpeechEncoder};
      c.max_steps = 10000;
      c.schedule = Schedule::kConstant;
      c.dataset = DatasetSelector::kAccented;
      break;
    default:
      throw Error("stage must be 1, 2 or 3 (got " + std::to_string(stage) + ")");
  }
  return c;
}

void StageConfig::validate() const {
  const std::string where = "stage " + std::to_string(stage) + " config: ";
  if (stage < 1 || stage > 3) throw Error("stage must be 1, 2 or 3");
  if (trainable_groups.empty()) throw Error(where + "no trainable groups");
  if (stage == 1 && trainable_groups.count(ParamGroup::kSpeechEncoder)) {
    throw Error(where + "stage 1 must not train the speech encoder");
  }
  if (stage > 1 &&
      trainable_groups != std::set<ParamGroup>{ParamGroup::kSpeechEncoder}) {
    throw Error(where + "stages 2 and 3 train exactly the speech encoder");
  }
  if (stage == 3 && !(lambda1 > 0.0 && lambda2 > 0.0)) {
    throw Error(where + "lambda1 and lambda2 must be > 0");
  }
  if (max_steps < 1 || batch_size < 1) {
    throw Error(where + "max_steps and batch_size must be >= 1");
  }
  if (schedule == Schedule::kWarmup && warmup_steps < 1) {
    throw Error(where + "warmup_steps must be >= 1");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 &&
        epsilon > 0.0)) {
    throw Error(where + "invalid Adam parameters");
  }
  if (val_every < 1 || log_every < 1) {
    throw Error(where + "val_every and log_every must be >= 1");
  }
}

void to_json(nlohmann::json& j, const StageConfig& c) {
  std::vector<std::string> groups;
  for (auto g : c.trainable_groups) groups.emplace_back(to_string(g));
  j = {{"stage", c.stage},
       {"trainable_groups", groups},
       {"max_steps", c.max_steps},
       {"batch_size", c.batch_size},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"schedule", to_string(c.schedule)},
       {"warmup_steps", c.warmup_steps},
       {"constant_lr", c.constant_lr},
       {"lr_scale", c.lr_scale},
       {"lambda1", c.lambda1},
       {"lambda2", c.lambda2},
       {"use_mel_star", c.use_mel_star},
       {"dataset", to_string(c.dataset)},
       {"val_every", c.val_every},
       {"log_every", c.log_every},
       {"grad_clip", c.grad_clip}};
}

void from_json(const nlohmann::json& j, StageConfig& c) {
  c = StageConfig::defaults(j.value("stage", c.stage));
  if (j.contains("trainable_groups")) {
    c.trainable_groups.clear();
    for (const auto& g : j.at("trainable_groups")) {
      c.trainable_groups.insert(param_group_from_string(g.get<std::string>()));
    }
  }
  c.max_steps = j.value("max_steps", c.max_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  if (j.contains("schedule")) {
    const auto s = j.at("schedule").get<std::string>();
    if (s == "warmup") {
      c.schedule = Schedule::kWarmup;
    } else if (s == "constant") {
      c.schedule = Schedule::kConstant;
    } else {
      throw Error("unknown schedule '" + s + "'");
    }
  }
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.constant_lr = j.value("constant_lr", c.constant_lr);
  c.lr_scale = j.value("lr_scale", c.lr_scale);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.use_mel_star = j.value("use_mel_star", c.use_mel_star);
  if (j.contains("dataset")) {
    c.dataset = dataset_selector_from_string(j.at("dataset").get<std::string>());
  }
  c.val_every = j.value("val_every", c.val_every);
  c.log_every = j.value("log_every", c.log_every);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
}

nlohmann::json to_json(const LossBreakdown& b) {
  return {{"total", b.total},     {"mel", b.mel},
          {"duration", b.duration}, {"pitch", b.pitch},
          {"energy", b.energy},   {"emb", b.emb},
          {"mel_star", b.mel_star}, {"lambda1", b.lambda1},
          {"lambda2", b.lambda2}};
}

StageLoss loss_stage1(const Var& mel_before, const Var& mel_after,
                      const Matrix& mel_target, const Var& log_duration_pred,
                      const std::vector<double>& log_duration_target,
                      const Var& pitch_pred,
                      const std::vector<double>& pitch_target,
                      const Var& energy_pred,
                      const std::vector<double>& energy_target,
                      const Mask& frame_mask, const Mask& phone_mask) {
  const auto T = static_cast<Eigen::Index>(frame_mask.size());
  const auto N = static_cast<Eigen::Index>(phone_mask.size());
  const Var target = Var::constant(mel_target);
  check_rows(target, T, "stage 1 loss (mel target)");
  check_same_shape(mel_before, target, "stage 1 loss (mel before postnet)");
  check_same_shape(mel_after, target, "stage 1 loss (mel after postnet)");
  check_rows(log_duration_pred, N, "stage 1 loss (durations)");
  check_rows(pitch_pred, T, "stage 1 loss (pitch)");
  check_rows(energy_pred, T, "stage 1 loss (energy)");
  const Var dur_t = column(log_duration_target);
  const Var pitch_t = column(pitch_target);
  const Var energy_t = column(energy_target);
  check_rows(dur_t, N, "stage 1 loss (duration target)");
  check_rows(pitch_t, T, "stage 1 loss (pitch target)");
  check_rows(energy_t, T, "stage 1 loss (energy target)");

  const Var mel = ag::masked_l1_mean(mel_before, target, frame_mask) +
                  ag::masked_l1_mean(mel_after, target, frame_mask);
  const Var dur = ag::masked_mse_mean(log_duration_pred, dur_t, phone_mask);
  const Var pitch = ag::masked_mse_mean(pitch_pred, pitch_t, frame_mask);
  const Var energy = ag::masked_mse_mean(energy_pred, energy_t, frame_mask);

  StageLoss out;
  out.total = mel + dur + pitch + energy;
  out.parts.mel = mel.item();
  out.parts.duration = dur.item();
  out.parts.pitch = pitch.item();
  out.parts.energy = energy.item();
  out.parts.total = out.total.item();
  return out;
}

StageLoss loss_stage2(const Var& speech_hidden, const Var& text_hidden,
                      const Mask& frame_mask) {
  check_same_shape(speech_hidden, text_hidden, "stage 2 loss");
  check_rows(speech_hidden, static_cast<Eigen::Index>(frame_mask.size()),
             "stage 2 loss (mask)");
  StageLoss out;
  out.total = ag::masked_row_l2_mean(speech_hidden, ag::detach(text_hidden),
                                     frame_mask);
  out.parts.emb = out.total.item();
  out.parts.total = out.parts.emb;
  return out;
}

StageLoss loss_stage3(const Var& speech_hidden, const Var& text_hidden,
                      const Var& speech_mel, const Var& text_mel,
                      double lambda1, double lambda2, const Mask& frame_mask,
                      bool use_mel_star) {
  check_same_shape(speech_hidden, text_hidden, "stage 3 loss (hidden)");
  check_same_shape(speech_mel, text_mel, "stage 3 loss (mel)");
  check_rows(speech_mel, speech_hidden.rows(), "stage 3 loss (mel vs hidden)");
  check_rows(speech_hidden, static_cast<Eigen::Index>(frame_mask.size()),
             "stage 3 loss (mask)");
  const Var emb = ag::masked_row_l2_mean(speech_hidden,
                                         ag::detach(text_hidden), frame_mask);
  const Var mel_star =
      ag::masked_row_l1_mean(speech_mel, ag::detach(text_mel), frame_mask);
  StageLoss out;
  out.parts.lambda1 = lambda1;
  out.parts.lambda2 = use_mel_star ? lambda2 : 0.0;
  out.total = ag::scale(emb, lambda1);
  if (use_mel_star) out.total = out.total + ag::scale(mel_star, lambda2);
  out.parts.emb = emb.item();
  out.parts.mel_star = mel_star.item();
  out.parts.total = out.total.item();
  return out;
}

double lr_schedule(std::int64_t step, int warmup_steps, int hidden_dim) {
  if (step < 1) throw Error("lr_schedule: step must be >= 1");
  if (warmup_steps < 1 || hidden_dim < 1) {
    throw Error("lr_schedule: warmup_steps and hidden_dim must be >= 1");
  }
  const double s = static_cast<double>(step);
  return std::pow(static_cast<double>(hidden_dim), -0.5) *
         std::min(std::pow(s, -0.5),
                  s * std::pow(static_cast<double>(warmup_steps), -1.5));
}

double stage_lr(const StageConfig& cfg, std::int64_t step, int hidden_dim) {
  if (step < 1) throw Error("lr_schedule: step must be >= 1");
  if (cfg.schedule == Schedule::kConstant) return cfg.constant_lr;
  return cfg.lr_scale * lr_schedule(step, cfg.warmup_steps, hidden_dim);
}

Adam::Adam(std::vector<NamedParameter> params, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var p = params_[i].var;
    // Parameters outside the trained groups, or untouched by this loss,
    // are left exactly as they are.
    if (!p.requires_grad() || !p.has_grad()) continue;
    const Matrix g = p.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        lr * (m_[i].array() / c1) /
        ((v_[i].array() / c2).sqrt() + epsilon_);
  }
}

double clip_grad_norm(const std::vector<NamedParameter>& params,
                      double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.var.requires_grad() && p.var.has_grad()) {
      sq += p.var.node()->grad.squaredNorm();
    }
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (p.var.requires_grad() && p.var.has_grad()) p.var.node()->grad *= s;
    }
  }
  return norm;
}

TeacherTargets compute_teacher(const AccentModel& model, const Example& ex,
                               bool with_mel) {
  const ForwardContext eval;
  TeacherTargets t;
  const Mask phone_mask = full_mask(static_cast<Eigen::Index>(ex.phone_ids.size()));
  const Var e = model.encode_text(ex.phone_ids, phone_mask, eval);
  const Var h = length_regulate(e, ex.durations);
  t.hidden = h.value();
  if (with_mel) {
    const Mask mask = full_mask(h.rows());
    const auto var = model.variance_adapt(
        h, model.speaker_embedding(ex.speaker_id), mask, nullptr, nullptr, eval);
    t.mel = model.decode(var.hidden, mask, eval).frames.value();
  }
  return t;
}

TeacherCache build_teacher_cache(const AccentModel& model,
                                 const std::vector<Example>& examples,
                                 bool with_mel) {
  TeacherCache cache;
  for (const auto& ex : examples) {
    cache.emplace(ex.utt_id, compute_teacher(model, ex, with_mel));
  }
  return cache;
}

StageLoss stage_loss(const StageConfig& cfg, const AccentModel& model,
                     const std::vector<const Example*>& batch,
                     FeatureKind kind, const ForwardContext& ctx,
                     const TeacherCache* cache) {
  if (batch.empty()) throw Error("stage loss: empty batch");
  if (cfg.stage == 1) {
    std::vector<Var> before, after, log_dur, pitch, energy;
    std::vector<Matrix> mel_targets;
    std::vector<double> dur_t, pitch_t, energy_t;
    Eigen::Index frames = 0;
    for (const Example* ex : batch) {
      const auto pt = transformed(ex->pitch, pitch_to_target);
      const auto et = transformed(ex->energy, energy_to_target);
      const auto out = model.text_branch(ex->phone_ids, ex->durations,
                                         ex->speaker_id, &pt, &et, ctx);
      if (out.mel.frames.rows() != ex->mel.rows()) {
        throw Error("utterance " + ex->utt_id + ": durations sum to " +
                    std::to_string(out.mel.frames.rows()) + " frames, mel has " +
                    std::to_string(ex->mel.rows()));
      }
      before.push_back(out.mel.before_postnet);
      after.push_back(out.mel.frames);
      log_dur.push_back(out.log_durations);
      pitch.push_back(out.variance.pitch_pred);
      energy.push_back(out.variance.energy_pred);
      mel_targets.push_back(ex->mel);
      for (int d : ex->durations) dur_t.push_back(duration_to_target(d));
      pitch_t.insert(pitch_t.end(), pt.begin(), pt.end());
      energy_t.insert(energy_t.end(), et.begin(), et.end());
      frames += ex->mel.rows();
    }
    Matrix target(frames, mel_targets.front().cols());
    Eigen::Index row = 0;
    for (const auto& m : mel_targets) {
      target.middleRows(row, m.rows()) = m;
      row += m.rows();
    }
    return loss_stage1(ag::concat_rows(before), ag::concat_rows(after), target,
                       ag::concat_rows(log_dur), dur_t,
                       ag::concat_rows(pitch), pitch_t,
                       ag::concat_rows(energy), energy_t, full_mask(frames),
                       full_mask(static_cast<Eigen::Index>(dur_t.size())));
  }

  const bool with_mel = cfg.stage == 3;
  const ForwardContext eval;
  std::vector<Var> hs, ht, ms, mt;
  for (const Example* ex : batch) {
    TeacherTargets local;
    const TeacherTargets* teacher = nullptr;
    if (cache) {
      const auto it = cache->find(ex->utt_id);
      if (it != cache->end()) teacher = &it->second;
    }
    if (!teacher) {
      local = compute_teacher(model, *ex, with_mel);
      teacher = &local;
    }
    if (ex->features.rows() != teacher->hidden.rows()) {
      throw Error("utterance " + ex->utt_id + ": speech features have " +
                  std::to_string(ex->features.rows()) +
                  " frames but durations sum to " +
                  std::to_string(teacher->hidden.rows()));
    }
    const Mask mask = full_mask(ex->features.rows());
    const Var h = model.encode_speech(Var::constant(ex->features), kind, mask, ctx);
    hs.push_back(h);
    ht.push_back(Var::constant(teacher->hidden));
    if (with_mel) {
      const auto var = model.variance_adapt(
          h, model.speaker_embedding(ex->speaker_id), mask, nullptr, nullptr,
          eval);
      ms.push_back(model.decode(var.hidden, mask, eval).frames);
      mt.push_back(Var::constant(teacher->mel));
    }
  }
  const Var hs_all = ag::concat_rows(hs);
  const Mask mask = full_mask(hs_all.rows());
  if (cfg.stage == 2) return loss_stage2(hs_all, ag::concat_rows(ht), mask);
  return loss_stage3(hs_all, ag::concat_rows(ht), ag::concat_rows(ms),
                     ag::concat_rows(mt), cfg.lambda1, cfg.lambda2, mask,
                     cfg.use_mel_star);
}

LossBreakdown evaluate_stage(const StageConfig& cfg, const AccentModel& model,
                             const std::vector<Example>& examples,
                             FeatureKind kind, const TeacherCache* cache) {
  if (examples.empty()) throw Error("evaluate_stage: no examples");
  const ForwardContext eval;
  LossBreakdown acc;
  double total_frames = 0.0;
  for (std::size_t start = 0; start < examples.size();
       start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end =
        std::min(examples.size(), start + static_cast<std::size_t>(cfg.batch_size));
    std::vector<const Example*> chunk;
    double frames = 0.0;
    for (std::size_t i = start; i < end; ++i) {
      chunk.push_back(&examples[i]);
      frames += static_cast<double>(examples[i].num_frames());
    }
    accumulate(acc, stage_loss(cfg, model, chunk, kind, eval, cache).parts,
               frames);
    total_frames += frames;
  }
  LossBreakdown out;
  accumulate(out, acc, 1.0 / total_frames);
  return out;
}

std::vector<Example> select_examples(const std::vector<Example>& examples,
                                     DatasetSelector selector) {
  std::vector<Example> out;
  for (const auto& ex : examples) {
    if (selector == DatasetSelector::kAll ||
        (selector == DatasetSelector::kNative) ==
            (ex.accent == AccentTag::kNative)) {
      out.push_back(ex);
    }
  }
  return out;
}

void fit_energy_range(const std::vector<Example>& examples, ModelConfig& cfg) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& ex : examples) {
    for (double e : ex.energy) {
      const double v = energy_to_target(e);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) throw Error("fit_energy_range: no energy values");
  if (hi <= lo) hi = lo + 1.0;
  cfg.energy_min = lo;
  cfg.energy_max = hi;
}

StageResult run_stage(const StageConfig& cfg, AccentModel& model,
                      const std::vector<Example>& train_all,
                      const std::vector<Example>& val_all,
                      const RunStageOptions& opts) {
  cfg.validate();
  const std::string tag = "stage" + std::to_string(cfg.stage);

  // Prerequisites.
  const Checkpoint* init = opts.init;
  if (cfg.stage == 2 && (!init || init->stage != 1)) {
    throw Error("stage 2 requires a stage-1 checkpoint" +
                std::string(init ? " (got stage " + std::to_string(init->stage) + ")"
                                 : ""));
  }
  if (cfg.stage == 3) {
    if (!init) throw Error("stage 3 requires a stage-2 checkpoint");
    if (init->stage == 1 && !opts.allow_skip_stage2) {
      throw Error(
          "stage 3 requires a stage-2 checkpoint; pass --allow-skip-stage2 to "
          "fine-tune directly from stage 1");
    }
    if (init->stage != 1 && init->stage != 2) {
      throw Error("stage 3 cannot start from a stage-" +
                  std::to_string(init->stage) + " checkpoint");
    }
  }
  if (init) model.load_state_dict(init->state());

  const auto train = select_examples(train_all, cfg.dataset);
  const auto val = select_examples(val_all, cfg.dataset);
  if (train.empty()) {
    throw Error(tag + ": no training examples for dataset '" +
                std::string(to_string(cfg.dataset)) + "'");
  }

  model.set_trainable(cfg.trainable_groups);
  model.zero_grad();

  TeacherCache train_cache, val_cache;
  if (cfg.stage > 1) {
    train_cache = build_teacher_cache(model, train, cfg.stage == 3);
    val_cache = build_teacher_cache(model, val, cfg.stage == 3);
  }

  std::filesystem::create_directories(opts.out_dir);
  StageResult result;
  result.log_path = opts.out_dir / (tag + "_log.jsonl");
  result.best_checkpoint = opts.out_dir / (tag + "_best.ckpt");
  result.last_checkpoint = opts.out_dir / (tag + "_last.ckpt");
  std::ofstream log(result.log_path, std::ios::trunc);
  if (!log) throw Error("cannot write " + result.log_path.string());
  auto emit = [&](nlohmann::json rec) {
    log << rec.dump() << '\n';
    log.flush();
    if (opts.on_log) opts.on_log(rec);
    result.log.push_back(std::move(rec));
  };

  nlohmann::json lineage = init ? init->lineage : nlohmann::json::array();
  nlohmann::json entry = {{"stage", cfg.stage},
                          {"steps", cfg.max_steps},
                          {"dataset", to_string(cfg.dataset)},
                          {"init_stage", init ? init->stage : 0}};
  if (cfg.stage > 1) entry["feature_kind"] = to_string(opts.feature_kind);
  if (cfg.stage == 3) entry["use_mel_star"] = cfg.use_mel_star;
  lineage.push_back(entry);

  std::mt19937_64 order_rng(opts.seed);
  std::mt19937_64 dropout_rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  const ForwardContext train_ctx{true, &dropout_rng};
  Adam adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.epsilon);
  const int d = model.config().hidden_dim;

  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();
  double best = std::numeric_limits<double>::infinity();
  bool have_best = false;
  LossBreakdown window;
  int window_steps = 0;

  auto validate_now = [&](std::int64_t step, double lr) {
    if (val.empty()) return;
    const auto v = evaluate_stage(cfg, model, val, opts.feature_kind,
                                  cfg.stage > 1 ? &val_cache : nullptr);
    result.final_val = v;
    emit({{"kind", "val"}, {"stage", cfg.stage}, {"step", step}, {"lr", lr},
          {"loss", to_json(v)}});
    if (v.total < best) {
      best = v.total;
      have_best = true;
      save_checkpoint(result.best_checkpoint,
                      make_checkpoint(model, opts.config_echo, cfg.stage, step,
                                      lineage));
    }
  };

  for (std::int64_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<const Example*> batch;
    while (batch.size() < static_cast<std::size_t>(cfg.batch_size) &&
           batch.size() < train.size()) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        portable_shuffle(order, order_rng);
        cursor = 0;
      }
      batch.push_back(&train[order[cursor++]]);
    }
    const double lr = stage_lr(cfg, step, d);
    StageLoss loss = stage_loss(cfg, model, batch, opts.feature_kind, train_ctx,
                                cfg.stage > 1 ? &train_cache : nullptr);
    if (!finite(loss.parts)) {
      emit({{"kind", "abort"}, {"stage", cfg.stage}, {"step", step},
            {"lr", lr}, {"loss", to_json(loss.parts)}});
      throw Error(tag + ": non-finite loss at step " + std::to_string(step) +
                  ": " + to_json(loss.parts).dump());
    }
    ag::backward(loss.total);
    clip_grad_norm(model.parameters(), cfg.grad_clip);
    adam.step(lr);
    model.zero_grad();

    accumulate(window, loss.parts, 1.0);
    ++window_steps;
    if (step % cfg.log_every == 0 || step == cfg.max_steps) {
      LossBreakdown mean;
      accumulate(mean, window, 1.0 / window_steps);
      emit({{"kind", "train"}, {"stage", cfg.stage}, {"step", step},
            {"lr", lr}, {"loss", to_json(mean)}});
      window = LossBreakdown{};
      window_steps = 0;
    }
    if (step % cfg.val_every == 0 || step == cfg.max_steps) {
      validate_now(step, lr);
    }
  }

  save_checkpoint(result.last_checkpoint,
                  make_checkpoint(model, opts.config_echo, cfg.stage,
                                  cfg.max_steps, lineage));
  if (!have_best) {
    std::filesystem::copy_file(result.last_checkpoint, result.best_checkpoint,
                               std::filesystem::copy_options::overwrite_existing);
  }
  spdlog::info("{}: finished {} steps, checkpoints in {}", tag, cfg.max_steps,
               opts.out_dir.string());
  return result;
}

GradCheckResult gradient_check(const std::function<Var()>& loss_fn,
                               const std::vector<NamedParameter>& params,
                               double eps, double floor,
                               std::size_t max_entries) {
  for (const auto& p : params) {
    Var v = p.var;
    v.zero_grad();
  }
  ag::backward(loss_fn());
  GradCheckResult r;
  for (const auto& p : params) {
    Var v = p.var;
    const Matrix analytic = v.grad();
    const Eigen::Index n = v.value().size();
    const Eigen::Index limit =
        max_entries == 0 ? n : std::min<Eigen::Index>(n, max_entries);
    for (Eigen::Index i = 0; i < limit; ++i) {
      double& x = v.mutable_value().data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = loss_fn().item();
      x = saved - eps;
      const double down = loss_fn().item();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.data()[i];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), floor});
      ++r.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        char buf[64];
        std::snprintf(buf, sizeof buf, "] analytic %.3e numeric %.3e", a,
                      numeric);
        r.worst = p.name + "[" + std::to_string(i) + buf;
      }
    }
    v.zero_grad();
  }
  return r;
}

}  // namespace accent
