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

// accent: preprocess / train / convert / evaluate.
//
// Every command resolves the experiment config (defaults < --config file <
// AC_* environment < --seed / --set), logs it, and writes its outputs under
// one run directory: --run-dir, or <run_root>/<UTC timestamp>-<config hash>.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "accent/checkpoint.h"
#include "accent/config.h"
#include "accent/error.h"
#include "accent/features.h"
#include "accent/inference.h"
#include "accent/pipeline.h"
#include "accent/util.h"
#include "accent/wav.h"

namespace fs = std::filesystem;
using namespace accent;

namespace {

struct Globals {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string run_dir;
  std::vector<std::string> sets;
  std::string log_level = "info";
};

struct Resolved {
  nlohmann::json effective;
  ExperimentConfig cfg;
  fs::path run_dir;
};

Resolved resolve(const Globals& g, const std::string& command) {
  std::vector<std::string> sets = g.sets;
  if (g.seed) sets.push_back("seed=" + std::to_string(*g.seed));
  Resolved r;
  r.effective = resolve_config(g.config_file, current_environment(), sets);
  r.cfg = config_from_json(r.effective);
  r.cfg.validate();
  r.run_dir = g.run_dir.empty() ? default_run_dir(r.cfg, r.effective)
                                : fs::path(g.run_dir);
  fs::create_directories(r.run_dir);
  spdlog::info("run dir {}", r.run_dir.string());
  spdlog::info("effective config (hash {}): {}", config_hash(r.effective),
               r.effective.dump());
  write_file(r.run_dir / (command + "_config.json"), r.effective.dump(2) + "\n");
  return r;
}

fs::path under(const fs::path& run_dir, const fs::path& p) {
  return p.is_absolute() ? p : run_dir / p;
}

// Mel settings the checkpoint was trained with, falling back to the
// current config for checkpoints without an echo.
MelConfig checkpoint_mel(const Checkpoint& ckpt, const ExperimentConfig& cfg) {
  if (ckpt.config.contains("mel")) return ckpt.config.at("mel").get<MelConfig>();
  return cfg.mel;
}

int cmd_preprocess(const Globals& g, const std::string& corpus,
                   const std::string& lexicon) {
  Globals local = g;
  // JSON-quoted so paths never parse as numbers.
  if (!corpus.empty()) {
    local.sets.push_back("data.corpus_root=" + nlohmann::json(corpus).dump());
  }
  if (!lexicon.empty()) {
    local.sets.push_back("data.lexicon=" + nlohmann::json(lexicon).dump());
  }
  const Resolved r = resolve(local, "preprocess");
  const auto result = preprocess_corpus(r.cfg, r.run_dir / "data");
  std::cout << "preprocessed " << result.records.size() << " utterances ("
            << result.computed << " computed, " << result.skipped
            << " cached) into " << (r.run_dir / "data").string() << "\n";
  return 0;
}

int cmd_train(const Globals& g, int stage, const std::string& init,
              bool allow_skip, const std::string& data) {
  const Resolved r = resolve(g, "train_stage" + std::to_string(stage));
  TrainRequest req;
  req.stage = stage;
  req.init = init;
  req.allow_skip_stage2 = allow_skip;
  req.data_dir = data.empty() ? r.run_dir / "data" : fs::path(data);
  req.run_dir = r.run_dir;
  const auto result = train_stage(r.cfg, r.effective, req);
  std::cout << "stage " << stage << " done: best "
            << result.best_checkpoint.string() << ", last "
            << result.last_checkpoint.string() << "\n";
  return 0;
}

struct ConvertArgs {
  std::string checkpoint, input, features = "mel", out, vocoder, dvector,
      pretrained;
  int speaker = -1;
  bool copy_prosody = false;
};

int cmd_convert(const Globals& g, const ConvertArgs& a) {
  const Resolved r = resolve(g, "convert");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Converter converter(ckpt);
  const FeatureKind kind = feature_kind_from_string(a.features);
  if (kind != converter.feature_kind()) {
    throw Error("checkpoint speech encoder expects " +
                std::string(to_string(converter.feature_kind())) +
                " features, --features says " + a.features);
  }
  const MelConfig mel_cfg = checkpoint_mel(ckpt, r.cfg);

  AcousticFeatures feats;
  ConvertOptions opts;
  const fs::path input(a.input);
  if (input.extension() == ".wav") {
    const Waveform wave = read_wav(input);
    const AcousticFeatures mel = compute_mel(wave, mel_cfg);
    if (kind == FeatureKind::kMel) {
      feats = mel;
    } else if (!a.pretrained.empty()) {
      feats = load_pretrained_features(a.pretrained, mel.num_frames(),
                                       ckpt.model.pretrained_dim);
    } else {
      feats = run_feature_adapter(r.cfg.inference.feature_cmd, input,
                                  r.run_dir / "features.acft",
                                  mel.num_frames(), ckpt.model.pretrained_dim);
    }
    if (a.copy_prosody || r.cfg.inference.copy_prosody) {
      opts.copy_prosody = true;
      opts.source_prosody = extract_prosody(wave, mel_cfg, r.cfg.prosody);
    }
  } else {
    // A precomputed T x D feature matrix at the output frame rate.
    feats.frames = load_matrix(input);
    feats.source_kind = kind;
    if (a.copy_prosody) throw Error("--copy-prosody needs a .wav input");
  }
  if (!a.dvector.empty()) opts.speaker_vector = load_matrix(a.dvector);

  const auto mel = converter.convert(feats, a.speaker, opts);
  const fs::path out = under(r.run_dir, a.out);
  export_mel(mel.frames, out);
  std::cout << "wrote " << out.string() << " (" << mel.frames.rows()
            << " frames)\n";
  const std::string vocoder =
      a.vocoder.empty() ? r.cfg.inference.vocoder_cmd : a.vocoder;
  if (!vocoder.empty()) {
    fs::path wav = out;
    wav.replace_extension(".wav");
    invoke_vocoder_adapter(mel.frames, vocoder, wav);
    std::cout << "wrote " << wav.string() << "\n";
  }
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& checkpoint,
                 const std::string& asr, const std::string& vocoder,
                 const std::string& split, const std::string& data) {
  Resolved r = resolve(g, "evaluate");
  if (!asr.empty()) r.cfg.eval.asr_cmd = asr;
  if (!vocoder.empty()) r.cfg.inference.vocoder_cmd = vocoder;
  const fs::path data_dir = data.empty() ? r.run_dir / "data" : fs::path(data);
  const fs::path out = r.run_dir / ("eval_" + split);
  const auto report = evaluate_checkpoint(r.cfg, checkpoint, data_dir, split, out);
  std::cout << "corpus WER " << report.corpus_wer << " over "
            << report.utterances.size() << " utterances ("
            << report.failures.size() << " failed); report "
            << (out / "report.json").string() << "\n";
  if (!report.failures.empty() &&
      report.failures.size() == report.utterances.size()) {
    throw Error("every utterance failed; first: " + report.failures.front().utt_id +
                ": " + report.failures.front().error);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-autoregressive accent conversion"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_file, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Override the experiment seed");
  app.add_option("--run-dir", g.run_dir, "Output directory for this command");
  app.add_option("--set", g.sets, "Config override key.path=value (repeatable)");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error");

  auto* pre = app.add_subcommand("preprocess", "Extract features and build manifests");
  std::string corpus, lexicon;
  pre->add_option("--corpus", corpus, "Corpus root (data.corpus_root)");
  pre->add_option("--lexicon", lexicon, "Pronunciation lexicon (data.lexicon)");

  auto* train = app.add_subcommand("train", "Run one training stage");
  int stage = 1;
  std::string init, train_data;
  bool allow_skip = false;
  train->add_option("--stage", stage, "Stage 1, 2 or 3")->required()
      ->check(CLI::Range(1, 3));
  train->add_option("--init", init, "Checkpoint of the previous stage");
  train->add_flag("--allow-skip-stage2", allow_skip,
                  "Let stage 3 start from a stage-1 checkpoint");
  train->add_option("--data", train_data, "Preprocess output directory");

  auto* conv = app.add_subcommand("convert", "Convert one utterance");
  ConvertArgs ca;
  conv->add_option("--checkpoint", ca.checkpoint)->required();
  conv->add_option("--input", ca.input, "Source .wav or T x D .acft")->required();
  conv->add_option("--speaker", ca.speaker, "Speaker ID")->required();
  conv->add_option("--features", ca.features, "mel | pretrained")
      ->check(CLI::IsMember({"mel", "pretrained"}));
  conv->add_option("--out", ca.out, "Output mel (.acft)")->required();
  conv->add_option("--vocoder", ca.vocoder, "Vocoder adapter command");
  conv->add_flag("--copy-prosody", ca.copy_prosody,
                 "Use source pitch/energy instead of the predictors");
  conv->add_option("--dvector", ca.dvector, "1 x d speaker vector (.acft)");
  conv->add_option("--pretrained", ca.pretrained,
                   "Pretrained-encoder output for the input wav (.acft)");

  auto* ev = app.add_subcommand("evaluate", "WER evaluation through adapters");
  std::string ev_ckpt, asr, ev_vocoder, split = "test", ev_data;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--asr", asr, "ASR adapter command");
  ev->add_option("--vocoder", ev_vocoder, "Vocoder adapter command");
  ev->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--data", ev_data, "Preprocess output directory");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  try {
    if (*pre) return cmd_preprocess(g, corpus, lexicon);
    if (*train) return cmd_train(g, stage, init, allow_skip, train_data);
    if (*conv) return cmd_convert(g, ca);
    if (*ev) return cmd_evaluate(g, ev_ckpt, asr, ev_vocoder, split, ev_data);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
