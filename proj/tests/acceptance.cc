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

// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Tolerances and runtime budgets are pinned below.
//
//   acceptance [--work-dir DIR] [--only N]...
//
// Criteria 6-8 train on the synthetic toy corpus; with --work-dir the corpus,
// runs and reports are kept for inspection.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "accent/checkpoint.h"
#include "accent/config.h"
#include "accent/error.h"
#include "accent/eval.h"
#include "accent/pipeline.h"
#include "accent/toy_corpus.h"
#include "accent/training.h"
#include "accent/util.h"
#include "test_util.h"

namespace fs = std::filesystem;
using namespace accent;
using accent::testing::random_matrix;

namespace {

// ---- pinned tolerances -------------------------------------------------------

constexpr double kRecomposeTol = 1e-6;      // criterion 1
constexpr double kGradRelTol = 1e-4;        // criterion 2
constexpr double kGradFloor = 1e-4;         // |g| below this compares absolutely
constexpr double kGradEps = 1e-6;           // central-difference step
constexpr std::size_t kMaxMicroParams = 1000;
constexpr int kFreezeSteps = 100;           // criterion 3
constexpr int kPropertyCases = 1000;        // criterion 4
constexpr double kPaddedTol = 1e-5;
constexpr double kAttentionRowTol = 1e-6;
constexpr int kWerMaxLen = 4;               // criterion 5, exhaustive
constexpr int kWerAlphabet = 3;
constexpr int kWerRandomPairs = 1000;
constexpr double kMelDropRatio = 0.5;       // criterion 6
constexpr int kMelReferenceStep = 100;
constexpr int kMelDeadlineStep = 5000;
constexpr double kValNoise = 0.05;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1. loss-formula fidelity ----------------------------------------------------

Var row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return Var::constant(m);
}

Mask random_mask(std::size_t n, std::mt19937_64& rng) {
  Mask m(n);
  for (auto& v : m) v = uniform01(rng) < 0.8;
  m[0] = 1;
  return m;
}

std::vector<double> random_vec(Eigen::Index n, std::mt19937_64& rng) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = 4.0 * uniform01(rng) - 2.0;
  return v;
}

Outcome criterion_losses() {
  std::vector<std::string> bad;
  // Micro-cases, exact.
  if (loss_stage2(row({0, 0}), row({3, 4}), {1}).parts.total != 5.0) bad.push_back("3-4-5");
  {
    const auto l = loss_stage3(row({2, 0}), row({0, 0}), row({1, -2}), row({0, 0}), 0.5,
                               2.0, {1});
    if (l.parts.emb != 2.0 || l.parts.mel_star != 3.0 || l.parts.total != 0.5 * 2.0 + 2.0 * 3.0) {
      bad.push_back("lambda-weighted sum");
    }
  }
  {
    Matrix m(1, 2);
    m << 1.0, -1.0;
    const auto l = loss_stage1(Var::constant(m), Var::constant(m), m, row({0.0}), {1.0},
                               row({0.0}), {0.0}, row({0.0}), {0.0}, {1}, {1});
    if (l.parts.total != 1.0 || l.parts.duration != 1.0) bad.push_back("stage-1 micro");
  }

  std::mt19937_64 rng(20261016);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index t = 1 + static_cast<Eigen::Index>(uniform_below(rng, 20));
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(uniform_below(rng, 8));
    const Eigen::Index c = 1 + static_cast<Eigen::Index>(uniform_below(rng, 8));
    const Mask fm = random_mask(static_cast<std::size_t>(t), rng);
    const Mask pm = random_mask(static_cast<std::size_t>(n), rng);
    const Matrix mt = random_matrix(t, c, rng, 3);
    const auto s1 = loss_stage1(
        Var::constant(random_matrix(t, c, rng, 3)), Var::constant(random_matrix(t, c, rng, 3)),
        mt, Var::constant(random_matrix(n, 1, rng)), random_vec(n, rng),
        Var::constant(random_matrix(t, 1, rng)), random_vec(t, rng),
        Var::constant(random_matrix(t, 1, rng)), random_vec(t, rng), fm, pm);
    const auto& p1 = s1.parts;
    worst = std::max({worst, std::abs(p1.total - (p1.mel + p1.duration + p1.pitch + p1.energy)),
                      std::abs(s1.total.item() - p1.total)});

    const Var hs = Var::constant(random_matrix(t, c, rng)), ht = Var::constant(random_matrix(t, c, rng));
    const auto s2 = loss_stage2(hs, ht, fm);
    worst = std::max({worst, std::abs(s2.parts.total - s2.parts.emb),
                      std::abs(s2.total.item() - s2.parts.total)});

    const double l1 = 0.1 + 2.0 * uniform01(rng), l2 = 2.0 * uniform01(rng);
    const auto s3 = loss_stage3(hs, ht, Var::constant(random_matrix(t, c, rng)),
                                Var::constant(mt), l1, l2, fm);
    worst = std::max({worst,
                      std::abs(s3.parts.total - (l1 * s3.parts.emb + l2 * s3.parts.mel_star)),
                      std::abs(s3.total.item() - s3.parts.total)});
    if (std::min({p1.mel, p1.duration, p1.pitch, p1.energy, s2.parts.emb, s3.parts.mel_star}) < 0) {
      bad.push_back("negative component");
      break;
    }
  }
  if (worst > kRecomposeTol) bad.push_back("recomposition error " + num("%.2e", worst));
  std::string detail = "1000 random recompositions, max error " + num("%.2e", worst) +
                       "; micro-cases exact";
  for (const auto& b : bad) detail += "; FAILED " + b;
  return {bad.empty(), detail};
}

// ---- 2. gradient correctness ------------------------------------------------------

struct GradReport {
  double worst = 0.0;
  std::string worst_name;
  std::size_t components = 0;
  std::size_t entries = 0;

  void check(const std::string& name, const std::function<Var()>& out,
             const std::vector<NamedParameter>& params, std::mt19937_64& rng) {
    const Matrix probe = out().value();
    const Matrix w = random_matrix(probe.rows(), probe.cols(), rng);
    record(name, gradient_check([&] { return ag::weighted_sum(out(), w); }, params,
                                kGradEps, kGradFloor));
  }
  void check_scalar(const std::string& name, const std::function<Var()>& loss,
                    const std::vector<NamedParameter>& params) {
    record(name, gradient_check(loss, params, kGradEps, kGradFloor));
  }
  void record(const std::string& name, const GradCheckResult& r) {
    ++components;
    entries += r.checked;
    if (r.checked == 0 || r.max_rel_error >= worst) {
      worst = r.checked == 0 ? 1e9 : r.max_rel_error;
      worst_name = name + " " + r.worst;
    }
  }
};

NamedParameter leaf(const std::string& name, const Matrix& m) {
  return {name, ParamGroup::kDecoder, Var::leaf(m, true)};
}

void gradcheck_ops(GradReport& g, std::mt19937_64& rng) {
  auto x = leaf("x", random_matrix(5, 4, rng));
  auto y = leaf("y", random_matrix(5, 4, rng));
  auto w = leaf("w", random_matrix(4, 3, rng));
  auto r = leaf("r", random_matrix(1, 4, rng));
  auto r3 = leaf("r3", random_matrix(1, 3, rng));
  auto gm = leaf("g", random_matrix(1, 4, rng));
  auto cw = leaf("cw", random_matrix(12, 2, rng));
  auto cb = leaf("cb", random_matrix(1, 2, rng));
  const Mask mask = {1, 1, 0, 1, 1};
  const std::vector<int> idx = {2, 0, -1, 4, 4, 1};
  g.check("add", [&] { return ag::add(x.var, y.var); }, {x, y}, rng);
  g.check("sub", [&] { return ag::sub(x.var, y.var); }, {x, y}, rng);
  g.check("mul", [&] { return ag::mul(x.var, y.var); }, {x, y}, rng);
  g.check("scale", [&] { return ag::scale(x.var, -1.7); }, {x}, rng);
  g.check("matmul", [&] { return ag::matmul(x.var, w.var); }, {x, w}, rng);
  g.check("matmul_nt", [&] { return ag::matmul_nt(x.var, y.var); }, {x, y}, rng);
  g.check("add_row", [&] { return ag::add_row(x.var, r.var); }, {x, r}, rng);
  g.check("linear", [&] { return ag::linear(x.var, w.var, r3.var); }, {x, w, r3}, rng);
  g.check("relu", [&] { return ag::relu(x.var); }, {x}, rng);
  g.check("tanh", [&] { return ag::tanh(x.var); }, {x}, rng);
  g.check("masked_softmax", [&] { return ag::masked_softmax(x.var, Mask{1, 0, 1, 1}); }, {x}, rng);
  g.check("layer_norm", [&] { return ag::layer_norm(x.var, gm.var, r.var); }, {x, gm, r}, rng);
  g.check("gather_rows", [&] { return ag::gather_rows(x.var, idx); }, {x}, rng);
  g.check("im2col", [&] { return ag::im2col(x.var, 3); }, {x}, rng);
  g.check("conv1d", [&] { return ag::conv1d(x.var, cw.var, cb.var, 3); }, {x, cw, cb}, rng);
  g.check("slice/concat", [&] {
    return ag::concat_rows({ag::slice_cols(x.var, 1, 2),
                            ag::concat_cols({ag::slice_cols(y.var, 0, 1), ag::slice_cols(x.var, 3, 1)})});
  }, {x, y}, rng);
  g.check("mask_rows", [&] { return ag::mask_rows(x.var, mask); }, {x}, rng);
  g.check("dropout", [&] {
    std::mt19937_64 d(5);
    return ag::dropout(x.var, 0.3, d);
  }, {x}, rng);
  g.check_scalar("sum", [&] { return ag::sum(ag::mul(x.var, y.var)); }, {x, y});
  g.check_scalar("masked_l1_mean", [&] { return ag::masked_l1_mean(x.var, y.var, mask); }, {x, y});
  g.check_scalar("masked_mse_mean", [&] { return ag::masked_mse_mean(x.var, y.var, mask); }, {x, y});
  g.check_scalar("masked_row_l2_mean", [&] { return ag::masked_row_l2_mean(x.var, y.var, mask); }, {x, y});
  g.check_scalar("masked_row_l1_mean", [&] { return ag::masked_row_l1_mean(x.var, y.var, mask); }, {x, y});
}

void gradcheck_layers(GradReport& g, std::mt19937_64& rng) {
  const ForwardContext eval;
  const Mask mask = {1, 1, 1, 1, 0};
  auto with_input = [&](ParamRegistry& reg, Eigen::Index cols) {
    auto ps = reg.release();
    ps.push_back(leaf("input", random_matrix(5, cols, rng)));
    return ps;
  };
  {
    ParamRegistry reg(1);
    Linear m(reg, "linear", ParamGroup::kDecoder, 3, 2);
    auto ps = with_input(reg, 3);
    const Var x = ps.back().var;
    g.check("Linear", [&] { return m.forward(x); }, ps, rng);
  }
  {
    ParamRegistry reg(2);
    LayerNorm m(reg, "ln", ParamGroup::kDecoder, 4);
    auto ps = with_input(reg, 4);
    ps[0].var.mutable_value() = random_matrix(1, 4, rng);
    const Var x = ps.back().var;
    g.check("LayerNorm", [&] { return m.forward(x); }, ps, rng);
  }
  {
    ParamRegistry reg(3);
    Conv1d m(reg, "conv", ParamGroup::kDecoder, 3, 2, 3);
    auto ps = with_input(reg, 3);
    const Var x = ps.back().var;
    g.check("Conv1d", [&] { return m.forward(x); }, ps, rng);
  }
  {
    ParamRegistry reg(4);
    MultiHeadAttention m(reg, "mha", ParamGroup::kDecoder, 4, 2);
    auto ps = with_input(reg, 4);
    const Var x = ps.back().var;
    g.check("MultiHeadAttention", [&] { return m.forward(x, mask, eval, 0.0); }, ps, rng);
  }
  {
    ParamRegistry reg(5);
    FftStack m(reg, "fft", ParamGroup::kDecoder, 2, {4, 2, 6, 3, 0.1});
    auto ps = with_input(reg, 4);
    const Var x = ps.back().var;
    g.check("FftStack", [&] { return m.forward(x, mask, eval); }, ps, rng);
  }
  {
    ParamRegistry reg(6);
    VariancePredictor m(reg, "vp", ParamGroup::kDecoder, 4, 3, 3, 0.5);
    auto ps = with_input(reg, 4);
    const Var x = ps.back().var;
    g.check("VariancePredictor", [&] { return m.forward(x, mask, eval); }, ps, rng);
  }
  {
    ParamRegistry reg(7);
    PostNet m(reg, "pn", ParamGroup::kDecoder, 3, 4, 3, 3, 0.5);
    auto ps = with_input(reg, 3);
    const Var x = ps.back().var;
    g.check("PostNet", [&] { return m.forward(x, mask, eval); }, ps, rng);
  }
  {
    auto e = leaf("e", random_matrix(4, 3, rng));
    g.check("length_regulate", [&] { return length_regulate(e.var, {2, 0, 3, 1}); }, {e}, rng);
  }
}

std::set<ParamGroup> all_groups() {
  return {std::begin(kAllParamGroups), std::end(kAllParamGroups)};
}

std::vector<NamedParameter> trainable(const AccentModel& m) {
  std::vector<NamedParameter> out;
  for (const auto& p : m.parameters()) {
    if (p.var.requires_grad()) out.push_back(p);
  }
  return out;
}

Outcome criterion_gradients() {
  std::mt19937_64 rng(77);
  GradReport g;
  gradcheck_ops(g, rng);
  gradcheck_layers(g, rng);

  const ModelConfig cfg = accent::testing::micro_config();
  AccentModel model(cfg, 31);
  if (model.num_parameters() > kMaxMicroParams) {
    return {false, "micro model has " + std::to_string(model.num_parameters()) + " parameters"};
  }
  accent::testing::jitter_parameters(model, rng);
  const ForwardContext eval;
  model.set_trainable(all_groups());
  auto params = model.parameters();
  const std::vector<int> ids = {3, 5, 4, 7};
  const std::vector<int> durs = {1, 2, 0, 3};
  const Mask pmask = {1, 1, 1, 1}, fmask(6, 1);
  const std::vector<double> pitch = {0.0, 4.7, 5.1, 5.3, 0.0, 4.9};
  const std::vector<double> energy = {0.2, 0.9, 1.4, 0.3, 0.6, 1.1};

  auto plus_input = [&](const Matrix& m) {
    auto ps = params;
    ps.push_back(leaf("input", m));
    return ps;
  };
  g.check("text encoder", [&] { return model.encode_text(ids, pmask, eval); }, params, rng);
  {
    auto ps = plus_input(random_matrix(4, cfg.hidden_dim, rng));
    const Var h = ps.back().var;
    g.check("duration predictor", [&] { return model.predict_log_durations(h, pmask, eval); }, ps, rng);
  }
  {
    auto ps = plus_input(random_matrix(6, cfg.n_mels, rng));
    const Var x = ps.back().var;
    g.check("speech encoder (mel)", [&] { return model.encode_speech(x, FeatureKind::kMel, fmask, eval); }, ps, rng);
  }
  {
    auto ps = plus_input(random_matrix(6, cfg.pretrained_dim, rng));
    const Var x = ps.back().var;
    g.check("speech encoder (pretrained)",
            [&] { return model.encode_speech(x, FeatureKind::kPretrained, fmask, eval); }, ps, rng);
  }
  g.check("speaker embedding", [&] { return model.speaker_embedding(1); }, params, rng);
  {
    auto ps = plus_input(random_matrix(6, cfg.hidden_dim, rng));
    const Var h = ps.back().var;
    auto adapt = [&](bool targets) {
      const auto v = model.variance_adapt(h, model.speaker_embedding(0), fmask,
                                          targets ? &pitch : nullptr,
                                          targets ? &energy : nullptr, eval);
      return ag::concat_cols({v.hidden, v.pitch_pred, v.energy_pred});
    };
    g.check("variance adaptor (targets)", [&] { return adapt(true); }, ps, rng);
    g.check("variance adaptor (predicted)", [&] { return adapt(false); }, ps, rng);
  }
  {
    auto ps = plus_input(random_matrix(6, cfg.hidden_dim, rng));
    const Var h = ps.back().var;
    g.check("decoder + postnet", [&] {
      const auto m = model.decode(h, fmask, eval);
      return ag::concat_cols({m.before_postnet, m.frames});
    }, ps, rng);
  }
  g.check("text branch", [&] {
    return model.text_branch(ids, durs, 1, &pitch, &energy, eval).mel.frames;
  }, params, rng);
  {
    auto ps = plus_input(random_matrix(6, cfg.n_mels, rng));
    const Var x = ps.back().var;
    g.check("speech branch", [&] {
      return model.speech_branch(x, FeatureKind::kMel, model.speaker_embedding(1), nullptr,
                                 nullptr, eval).mel.frames;
    }, ps, rng);
  }

  // Stage losses over a two-utterance batch; stages 2 and 3 differentiate
  // their trainable (speech-encoder) parameters.
  std::vector<Example> exs;
  for (int i = 0; i < 2; ++i) {
    exs.push_back(accent::testing::random_example(cfg, rng, 3, i, FeatureKind::kMel,
                                                  i ? AccentTag::kAccented : AccentTag::kNative));
  }
  std::vector<Example> pre_exs = exs;
  for (auto& e : pre_exs) {
    e.feature_kind = FeatureKind::kPretrained;
    e.features = random_matrix(e.num_frames(), cfg.pretrained_dim, rng);
  }
  struct Case {
    std::string name;
    int stage;
    bool mel_star;
    FeatureKind kind;
  };
  for (const Case& c : {Case{"stage-1 loss", 1, true, FeatureKind::kMel},
                        Case{"stage-2 loss (mel)", 2, true, FeatureKind::kMel},
                        Case{"stage-2 loss (pretrained)", 2, true, FeatureKind::kPretrained},
                        Case{"stage-3 loss", 3, true, FeatureKind::kMel},
                        Case{"stage-3 loss (pretrained)", 3, true, FeatureKind::kPretrained},
                        Case{"stage-3 loss without mel*", 3, false, FeatureKind::kMel}}) {
    StageConfig sc = StageConfig::defaults(c.stage);
    sc.use_mel_star = c.mel_star;
    model.set_trainable(sc.trainable_groups);
    const auto& src = c.kind == FeatureKind::kMel ? exs : pre_exs;
    const std::vector<const Example*> batch = {&src[0], &src[1]};
    g.check_scalar(c.name, [&] { return stage_loss(sc, model, batch, c.kind, eval).total; },
                   trainable(model));
  }

  const bool pass = g.worst < kGradRelTol;
  return {pass, std::to_string(g.components) + " components, " + std::to_string(g.entries) +
                    " entries, micro model " + std::to_string(model.num_parameters()) +
                    " params; max rel error " + num("%.2e", g.worst) + " at " + g.worst_name};
}

// ---- 3. freeze contract ---------------------------------------------------------

Outcome criterion_freeze(const fs::path& work) {
  const ModelConfig cfg = accent::testing::small_config();
  std::mt19937_64 rng(5);
  std::vector<Example> train, val;
  for (int i = 0; i < 8; ++i) {
    train.push_back(accent::testing::random_example(
        cfg, rng, 3 + i % 4, i % 2, FeatureKind::kMel,
        i % 3 ? AccentTag::kAccented : AccentTag::kNative));
  }
  for (int i = 0; i < 2; ++i) {
    val.push_back(accent::testing::random_example(cfg, rng, 4, i, FeatureKind::kMel,
                                                  i ? AccentTag::kAccented : AccentTag::kNative));
  }
  auto stage_cfg = [](int k) {
    StageConfig c = StageConfig::defaults(k);
    c.max_steps = kFreezeSteps;
    c.batch_size = 3;
    c.warmup_steps = 20;
    c.val_every = 50;
    c.log_every = 50;
    c.constant_lr = 1e-3;
    return c;
  };
  std::vector<std::string> bad;

  // A briefly trained stage-1 starting point.
  AccentModel m1(cfg, 3);
  StageConfig s1 = stage_cfg(1);
  s1.max_steps = 20;
  RunStageOptions o1;
  o1.out_dir = work / "s1";
  o1.seed = 1;
  const Checkpoint c1 = load_checkpoint(run_stage(s1, m1, train, val, o1).last_checkpoint);

  std::size_t compared = 0;
  auto frozen_identical = [&](const AccentModel& m, const Checkpoint& init, int stage) {
    const auto before = init.state();
    bool moved = false;
    for (const auto& p : m.parameters()) {
      if (p.group == ParamGroup::kSpeechEncoder) {
        moved |= !(p.var.value() == before.at(p.name));
        continue;
      }
      ++compared;
      if (!(p.var.value() == before.at(p.name))) {
        bad.push_back("stage " + std::to_string(stage) + " moved " + p.name);
      }
    }
    if (!moved) bad.push_back("stage " + std::to_string(stage) + " did not train the speech encoder");
  };

  AccentModel m2(cfg, 11);
  RunStageOptions o2;
  o2.out_dir = work / "s2";
  o2.seed = 2;
  o2.init = &c1;
  const Checkpoint c2 = load_checkpoint(run_stage(stage_cfg(2), m2, train, val, o2).last_checkpoint);
  frozen_identical(m2, c1, 2);

  AccentModel m3(cfg, 12);
  RunStageOptions o3;
  o3.out_dir = work / "s3";
  o3.seed = 3;
  o3.init = &c2;
  run_stage(stage_cfg(3), m3, train, val, o3);
  frozen_identical(m3, c2, 3);

  // Analytic gradients into frozen groups: exactly zero under each stage's
  // trainable set, and the detached teacher leaks nothing into the text side
  // even with every group differentiable.
  const ForwardContext eval;
  std::size_t zero_checked = 0;
  const std::vector<const Example*> batch = {&train[0], &train[1], &train[2]};
  for (int k = 2; k <= 3; ++k) {
    for (bool everything : {false, true}) {
      const StageConfig sc = stage_cfg(k);
      m3.set_trainable(everything ? all_groups() : sc.trainable_groups);
      m3.zero_grad();
      ag::backward(stage_loss(sc, m3, batch, FeatureKind::kMel, eval).total);
      for (const auto& p : m3.parameters()) {
        const bool must_be_zero =
            everything ? (p.group == ParamGroup::kTextEncoder ||
                          p.group == ParamGroup::kDurationPredictor ||
                          (k == 2 && p.group != ParamGroup::kSpeechEncoder))
                       : p.group != ParamGroup::kSpeechEncoder;
        if (!must_be_zero) continue;
        ++zero_checked;
        if (!(p.var.grad().array() == 0.0).all()) {
          bad.push_back("stage " + std::to_string(k) + " gradient into " + p.name);
        }
      }
    }
  }
  std::string detail = std::to_string(kFreezeSteps) + " steps each in stages 2 and 3; " +
                       std::to_string(compared) + " frozen tensors compared bit-for-bit, " +
                       std::to_string(zero_checked) + " frozen gradients checked";
  if (!bad.empty()) detail += "; FAILED " + bad.front() + " (+" + std::to_string(bad.size() - 1) + ")";
  return {bad.empty(), detail};
}

// ---- 4. length regulator and masking ------------------------------------------------

Outcome criterion_masking() {
  std::mt19937_64 rng(404);
  std::vector<std::string> bad;

  for (int c = 0; c < kPropertyCases && bad.empty(); ++c) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(uniform_below(rng, 12));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(uniform_below(rng, 6));
    std::vector<int> dur(static_cast<std::size_t>(n));
    int total = 0;
    for (auto& v : dur) total += v = static_cast<int>(uniform_below(rng, 6));
    if (total == 0) total += dur[0] = 1;
    const Matrix e = random_matrix(n, d, rng);
    const Matrix out = length_regulate(Var::constant(e), dur).value();
    if (out.rows() != total) {
      bad.push_back("length law");
      break;
    }
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int k = 0; k < dur[static_cast<std::size_t>(i)]; ++k, ++r) {
        if (!(out.row(r) == e.row(i))) bad.push_back("row order");
      }
    }
  }

  const ModelConfig cfg = accent::testing::small_config();
  AccentModel model(cfg, 8);
  const ForwardContext eval;
  double worst_pad = 0.0;
  for (int c = 0; c < kPropertyCases && bad.empty(); ++c) {
    const int total = 2 + static_cast<int>(uniform_below(rng, 14));
    const int valid = 1 + static_cast<int>(uniform_below(rng, total - 1));
    Mask mask(static_cast<std::size_t>(total), 0);
    std::fill(mask.begin(), mask.begin() + valid, 1);
    Matrix a, b;
    switch (c % 3) {
      case 0: {  // speech encoder
        Matrix x = random_matrix(total, cfg.n_mels, rng);
        a = model.encode_speech(Var::constant(x), FeatureKind::kMel, mask, eval).value();
        x.bottomRows(total - valid) = random_matrix(total - valid, cfg.n_mels, rng, 50.0);
        b = model.encode_speech(Var::constant(x), FeatureKind::kMel, mask, eval).value();
        break;
      }
      case 1: {  // text encoder, padded phone IDs replaced
        std::vector<int> ids(static_cast<std::size_t>(total));
        for (auto& v : ids) v = 3 + static_cast<int>(uniform_below(rng, cfg.n_phones - 3));
        a = model.encode_text(ids, mask, eval).value();
        for (int i = valid; i < total; ++i) ids[i] = 3 + static_cast<int>(uniform_below(rng, cfg.n_phones - 3));
        b = model.encode_text(ids, mask, eval).value();
        break;
      }
      default: {  // decoder and PostNet
        Matrix h = random_matrix(total, cfg.hidden_dim, rng);
        a = model.decode(Var::constant(h), mask, eval).frames.value();
        h.bottomRows(total - valid) = random_matrix(total - valid, cfg.hidden_dim, rng, 50.0);
        b = model.decode(Var::constant(h), mask, eval).frames.value();
      }
    }
    worst_pad = std::max(worst_pad, (a.topRows(valid) - b.topRows(valid)).cwiseAbs().maxCoeff());
    if (b.bottomRows(total - valid).cwiseAbs().maxCoeff() != 0.0) bad.push_back("padded rows not zero");
  }
  if (worst_pad > kPaddedTol) bad.push_back("padded-position invariance " + num("%.2e", worst_pad));

  double worst_row = 0.0;
  ParamRegistry reg(9);
  MultiHeadAttention mha(reg, "mha", ParamGroup::kDecoder, 8, 2);
  for (int c = 0; c < kPropertyCases && bad.empty(); ++c) {
    const int total = 1 + static_cast<int>(uniform_below(rng, 16));
    const int valid = 1 + static_cast<int>(uniform_below(rng, total));
    Mask mask(static_cast<std::size_t>(total), 0);
    std::fill(mask.begin(), mask.begin() + valid, 1);
    std::vector<Matrix> att;
    mha.forward(Var::constant(random_matrix(total, 8, rng, 3.0)), mask, eval, 0.0, &att);
    for (const auto& m : att) {
      for (int i = 0; i < valid; ++i) {
        worst_row = std::max(worst_row, std::abs(m.row(i).sum() - 1.0));
        for (int j = valid; j < total; ++j) {
          if (m(i, j) != 0.0) bad.push_back("weight on a padded key");
        }
      }
    }
  }
  if (worst_row > kAttentionRowTol) bad.push_back("attention row sum " + num("%.2e", worst_row));
  std::string detail = std::to_string(kPropertyCases) + " cases each; padded invariance max " +
                       num("%.2e", worst_pad) + ", attention row error max " + num("%.2e", worst_row);
  if (!bad.empty()) detail += "; FAILED " + bad.front();
  return {bad.empty(), detail};
}

// ---- 5. WER oracle -----------------------------------------------------------------

using Words = std::vector<std::string>;

// Memoized recursion over the three edit operations.
std::size_t oracle_distance(const Words& a, const Words& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t v = std::min({go(i + 1, j + 1) + (a[i] == b[j] ? 0u : 1u),
                                    go(i + 1, j) + 1, go(i, j + 1) + 1});
    memo[key] = v;
    return v;
  };
  return go(0, 0);
}

Outcome criterion_wer() {
  std::vector<Words> all = {{}};
  for (std::size_t start = 0, len = 1; len <= kWerMaxLen; ++len) {
    const std::size_t end = all.size();
    for (std::size_t i = start; i < end; ++i) {
      if (all[i].size() != len - 1) continue;
      for (int s = 0; s < kWerAlphabet; ++s) {
        Words w = all[i];
        w.push_back(std::string(1, static_cast<char>('a' + s)));
        all.push_back(std::move(w));
      }
    }
    start = end;
  }
  std::size_t pairs = 0, mismatches = 0;
  for (const auto& r : all) {
    for (const auto& h : all) {
      ++pairs;
      const std::size_t d = oracle_distance(r, h);
      bool ok = edit_distance(r, h) == d;
      if (r.empty()) {
        if (h.empty()) {
          ok &= wer(r, h) == 0.0;
        } else {
          try {
            wer(r, h);
            ok = false;
          } catch (const Error&) {
          }
        }
      } else {
        ok &= wer(r, h) == static_cast<double>(d) / static_cast<double>(r.size());
      }
      mismatches += !ok;
    }
  }
  std::mt19937_64 rng(55);
  for (int i = 0; i < kWerRandomPairs; ++i) {
    auto random_words = [&] {
      Words w(5 + uniform_below(rng, 20));
      for (auto& x : w) x = "w" + std::to_string(uniform_below(rng, 6));
      return w;
    };
    const Words r = random_words(), h = random_words();
    ++pairs;
    const std::size_t d = oracle_distance(r, h);
    mismatches += edit_distance(r, h) != d ||
                  wer(r, h) != static_cast<double>(d) / static_cast<double>(r.size());
  }
  return {mismatches == 0, std::to_string(all.size()) + " sequences (" +
                               std::to_string(all.size() * all.size()) +
                               " exhaustive pairs) + " + std::to_string(kWerRandomPairs) +
                               " random longer pairs; " + std::to_string(mismatches) +
                               " mismatches of " + std::to_string(pairs)};
}

// ---- 6-8. toy pipeline -----------------------------------------------------------------

struct Toy {
  fs::path work;
  ToyCorpusInfo info;
  nlohmann::json effective;
  ExperimentConfig cfg;
  fs::path data;
  std::string vocoder_cmd;
  std::string asr_cmd;
  // Filled by criterion 6.
  StageResult stage1, stage2, stage3;
  bool trained = false;
};

void prepare_toy(Toy& t) {
  ToyCorpusConfig tc;  // 2 native + 2 accented speakers x 12 sentences
  t.info = write_toy_corpus(t.work / "corpus", tc);
  t.effective = toy_experiment_config(t.info, tc);
  t.cfg = config_from_json(t.effective);
  t.cfg.validate();
  t.data = t.work / "data";
  preprocess_corpus(t.cfg, t.data);
  t.vocoder_cmd = std::string(ACCENT_TOY_VOCODER_PATH) + " {in} {out} --sample-rate " +
                  std::to_string(t.cfg.mel.sample_rate_hz) + " --hop " +
                  std::to_string(t.cfg.mel.hop_length);
  // Stand-in recognizer: a fixed transcript, so the reports exercise the
  // full convert -> vocode -> transcribe -> score path.
  const fs::path asr = t.work / "stub_asr.sh";
  write_file(asr, "#!/bin/sh\necho sam mean\n");
  fs::permissions(asr, fs::perms::owner_all, fs::perm_options::add);
  t.asr_cmd = asr.string();
}

StageResult train(const Toy& t, const nlohmann::json& effective, const fs::path& run_dir,
                  int stage, const fs::path& init = {}, bool allow_skip = false) {
  TrainRequest req;
  req.stage = stage;
  req.init = init;
  req.allow_skip_stage2 = allow_skip;
  req.data_dir = t.data;
  req.run_dir = run_dir;
  return train_stage(config_from_json(effective), effective, req);
}

std::vector<nlohmann::json> records(const StageResult& r, const std::string& kind) {
  std::vector<nlohmann::json> out;
  for (const auto& rec : r.log) {
    if (rec.at("kind") == kind) out.push_back(rec);
  }
  return out;
}

double loss_at(const nlohmann::json& rec, const char* key) {
  return rec.at("loss").at(key).get<double>();
}

Outcome criterion_toy_pipeline(Toy& t) {
  std::vector<std::string> bad;
  std::size_t native = 0, accented = 0;
  for (const auto& r : read_manifest(t.data / "manifest.jsonl")) {
    (r.accent == AccentTag::kNative ? native : accented)++;
  }
  if (native < 8 || accented < 8) bad.push_back("corpus too small");

  const fs::path run = t.work / "pipeline";
  t.stage1 = train(t, t.effective, run, 1);
  t.stage2 = train(t, t.effective, run, 2, t.stage1.last_checkpoint);
  t.stage3 = train(t, t.effective, run, 3, t.stage2.last_checkpoint);
  t.trained = true;

  // Stage 1: training mel L1 (pre- plus post-PostNet) vs its step-100 value.
  double at_ref = -1.0, best = 1e300;
  int best_step = 0;
  for (const auto& rec : records(t.stage1, "train")) {
    const int step = rec.at("step");
    if (step == kMelReferenceStep) at_ref = loss_at(rec, "mel");
    if (step > kMelReferenceStep && step <= kMelDeadlineStep && loss_at(rec, "mel") < best) {
      best = loss_at(rec, "mel");
      best_step = step;
    }
  }
  const bool mel_ok = at_ref > 0 && best < kMelDropRatio * at_ref;
  if (!mel_ok) bad.push_back("stage-1 mel did not halve");

  // Stage 2: validation L_emb over logged checkpoints.
  std::vector<double> val2;
  for (const auto& rec : records(t.stage2, "val")) val2.push_back(loss_at(rec, "emb"));
  bool mono = val2.size() >= 2 && val2.back() < val2.front();
  double running_min = val2.empty() ? 0.0 : val2.front();
  for (std::size_t i = 1; i < val2.size(); ++i) {
    mono &= val2[i] <= running_min * (1.0 + kValNoise);
    running_min = std::min(running_min, val2[i]);
  }
  if (!mono) bad.push_back("stage-2 validation L_emb not decreasing");

  // Stage 3: held-out (test split, accented) L_emb before vs after.
  const FeatureKind kind = t.cfg.data.feature_kind;
  const auto test = select_examples(
      load_examples(load_split(t.data, "test"), kind, t.cfg.model.pretrained_dim),
      DatasetSelector::kAccented);
  auto held_out_emb = [&](const fs::path& ckpt_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    AccentModel m(ck.model, 0);
    m.load_state_dict(ck.state());
    return evaluate_stage(t.cfg.stage3, m, test, kind).emb;
  };
  const double before = held_out_emb(t.stage2.last_checkpoint);
  const double after = held_out_emb(t.stage3.last_checkpoint);
  if (!(after < before)) bad.push_back("stage-3 held-out L_emb did not improve");

  std::ostringstream os;
  os << native << " native / " << accented << " accented utterances; stage-1 mel "
     << num("%.3f", at_ref) << " @" << kMelReferenceStep << " -> " << num("%.3f", best) << " @"
     << best_step << " (ratio " << num("%.2f", at_ref > 0 ? best / at_ref : 0.0) << ")";
  os << "; stage-2 val L_emb";
  for (double v : val2) os << " " << num("%.3f", v);
  os << "; stage-3 held-out L_emb " << num("%.4f", before) << " -> " << num("%.4f", after)
     << " on " << test.size() << " utterances";
  std::string detail = os.str();
  for (const auto& b : bad) detail += "; FAILED " + b;
  return {bad.empty(), detail};
}

Outcome criterion_ablations(Toy& t) {
  if (!t.trained) t.stage1 = train(t, t.effective, t.work / "pipeline", 1);
  const fs::path s1 = t.stage1.last_checkpoint;
  struct Row {
    std::string name;
    bool mel_star;
    std::string features;
    bool stage2;
  };
  const std::vector<Row> rows = {{"baseline", false, "mel", false},
                                 {"+mel*", true, "mel", false},
                                 {"+pretrained", true, "pretrained", false},
                                 {"+stage2", true, "pretrained", true}};
  std::vector<std::string> bad;
  std::set<std::string> checkpoint_hashes;
  std::ostringstream os;
  for (const auto& row : rows) {
    nlohmann::json eff = t.effective;
    eff["train"]["stage3"]["use_mel_star"] = row.mel_star;
    eff["data"]["feature_kind"] = row.features;
    eff["inference"]["vocoder_cmd"] = t.vocoder_cmd;
    eff["eval"]["asr_cmd"] = t.asr_cmd;
    const fs::path run = t.work / ("ablation_" + std::to_string(checkpoint_hashes.size()));
    fs::path init = s1;
    if (row.stage2) init = train(t, eff, run, 2, s1).last_checkpoint;
    const StageResult r3 = train(t, eff, run, 3, init, !row.stage2);
    checkpoint_hashes.insert(sha256_file(r3.last_checkpoint));

    // Loss terms actually optimized.
    for (const auto& rec : records(r3, "train")) {
      const double emb = loss_at(rec, "emb"), mel = loss_at(rec, "mel_star");
      const double l1 = loss_at(rec, "lambda1"), l2 = loss_at(rec, "lambda2");
      const double expect = row.mel_star ? l1 * emb + l2 * mel : l1 * emb;
      if (std::abs(loss_at(rec, "total") - expect) > kRecomposeTol || (row.mel_star != (l2 > 0)) ||
          !(mel > 0)) {
        bad.push_back(row.name + ": loss terms");
        break;
      }
    }
    // Lineage.
    const auto lineage = load_checkpoint(r3.last_checkpoint).lineage;
    std::vector<int> stages;
    for (const auto& e : lineage) stages.push_back(e.at("stage"));
    const std::vector<int> want = row.stage2 ? std::vector<int>{1, 2, 3} : std::vector<int>{1, 3};
    const auto& last = lineage.back();
    if (stages != want || last.at("use_mel_star") != row.mel_star ||
        last.at("feature_kind") != row.features || last.at("init_stage") != (row.stage2 ? 2 : 1)) {
      bad.push_back(row.name + ": lineage " + lineage.dump());
    }
    // Evaluation report.
    const auto report = evaluate_checkpoint(config_from_json(eff), r3.last_checkpoint, t.data,
                                            "test", run / "eval_test");
    const fs::path report_path = run / "eval_test" / "report.json";
    if (!fs::exists(report_path) || report.utterances.empty() || !report.failures.empty()) {
      bad.push_back(row.name + ": evaluation report");
    }
    os << row.name << " [stages";
    for (int s : stages) os << " " << s;
    os << ", " << row.features << ", mel* " << (row.mel_star ? "on" : "off") << ", val emb "
       << num("%.3f", r3.final_val.emb) << ", WER " << num("%.2f", report.corpus_wer) << "] ";
  }
  if (checkpoint_hashes.size() != rows.size()) bad.push_back("runs are not distinct");
  std::string detail = os.str();
  for (const auto& b : bad) detail += "; FAILED " + b;
  return {bad.empty(), detail};
}

Outcome criterion_determinism(Toy& t) {
  const StageResult a = t.trained ? t.stage1 : train(t, t.effective, t.work / "pipeline", 1);
  const StageResult b = train(t, t.effective, t.work / "rerun", 1);
  const bool logs = read_file(a.log_path) == read_file(b.log_path);
  const bool weights = sha256_file(a.last_checkpoint) == sha256_file(b.last_checkpoint);
  return {logs && weights, std::string("stage-1 loss logs ") + (logs ? "identical" : "DIFFER") +
                               " (" + std::to_string(a.log.size()) + " records), final weights " +
                               (weights ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gate"};
  std::string work_arg;
  std::vector<int> only;
  app.add_option("--work-dir", work_arg, "Keep toy corpus, runs and reports here");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  std::unique_ptr<accent::testing::ScratchDir> scratch;
  fs::path work;
  if (work_arg.empty()) {
    scratch = std::make_unique<accent::testing::ScratchDir>("acceptance");
    work = scratch->path();
  } else {
    work = fs::absolute(work_arg);
    fs::create_directories(work);
  }
  Toy toy;
  toy.work = work / "toy";
  bool toy_ready = false;

  struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
    bool needs_toy;
  };
  const std::vector<Criterion> criteria = {
      {1, "loss-formula fidelity", 60, criterion_losses, false},
      {2, "gradient correctness", 300, criterion_gradients, false},
      {3, "freeze contract", 120, [&] { return criterion_freeze(work / "freeze"); }, false},
      {4, "length regulator and masking", 120, criterion_masking, false},
      {5, "WER oracle equivalence", 60, criterion_wer, false},
      {6, "toy end-to-end pipeline", 1800, [&] { return criterion_toy_pipeline(toy); }, true},
      {7, "ablation switches", 600, [&] { return criterion_ablations(toy); }, true},
      {8, "determinism", 1800, [&] { return criterion_determinism(toy); }, true},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      if (c.needs_toy && !toy_ready) {
        prepare_toy(toy);
        toy_ready = true;
      }
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over runtime budget";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name
              << ", " << num("%.1f", secs) << " s / " << num("%.0f", c.budget_s)
              << " s): " << o.detail << std::endl;
  }
  std::cout << (failed ? "ACCEPTANCE FAILED: " + std::to_string(failed) + " criteria"
                       : std::string("ACCEPTANCE PASSED"))
            << std::endl;
  return failed ? 1 : 0;
}
