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

#include "accent/pipeline.h"

#include <algorithm>
#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "accent/error.h"
#include "accent/phones.h"
#include "accent/text_norm.h"
#include "accent/util.h"
#include "accent/wav.h"

namespace fs = std::filesystem;

namespace accent {
namespace {

struct CacheEntry {
  fs::path mel, pitch, energy, alignment, meta;
};

CacheEntry cache_entry(const fs::path& dir, const std::string& utt_id) {
  return {dir / (utt_id + ".mel.acft"), dir / (utt_id + ".pitch.acft"),
          dir / (utt_id + ".energy.acft"), dir / (utt_id + ".align.json"),
          dir / (utt_id + ".meta.json")};
}

// Hash of everything an utterance's cached outputs depend on.
std::string input_key(const UtteranceRecord& r, const ExperimentConfig& cfg,
                      const nlohmann::json& frontend) {
  std::string material = frontend.dump();
  material += "|wav:" + sha256_file(r.wav_path);
  material += "|text:" + sha256_hex(r.text);
  material += "|dur:" + (r.durations_path.empty()
                             ? std::string("none")
                             : sha256_file(r.durations_path));
  material += "|adjust:" + std::to_string(cfg.data.max_duration_adjust);
  return sha256_hex(material);
}

bool cache_valid(const CacheEntry& e, const std::string& key) {
  std::error_code ec;
  if (!fs::exists(e.meta, ec)) return false;
  try {
    const auto meta = nlohmann::json::parse(read_file(e.meta));
    if (meta.at("key").get<std::string>() != key) return false;
    for (const fs::path* p : {&e.mel, &e.pitch, &e.energy, &e.alignment}) {
      const auto& want = meta.at("outputs").at(p->filename().string());
      if (!fs::exists(*p) || sha256_file(*p) != want.get<std::string>()) {
        return false;
      }
    }
    // Outputs must also decode; a truncated file with a stale hash entry is
    // caught above, this guards against hand-edited metadata.
    load_matrix(e.mel);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

void compute_entry(const UtteranceRecord& r, const ExperimentConfig& cfg,
                   const std::vector<int>& phone_ids, const CacheEntry& e,
                   const std::string& key) {
  const Waveform wave = read_wav(r.wav_path);
  const auto mel = compute_mel(wave, cfg.mel);
  const auto prosody = extract_prosody(wave, cfg.mel, cfg.prosody);
  if (r.durations_path.empty()) {
    throw Error("no aligner durations (<stem>.dur) found");
  }
  const auto durations = reconcile_durations(
      read_durations(r.durations_path), phone_ids.size(),
      static_cast<int>(mel.num_frames()), cfg.data.max_duration_adjust);

  save_matrix(e.mel, mel.frames);
  save_vector(e.pitch, prosody.pitch);
  save_vector(e.energy, prosody.energy);
  write_alignment(e.alignment, phone_ids, durations);

  nlohmann::json meta = {{"key", key}, {"utt_id", r.utt_id}};
  for (const fs::path* p : {&e.mel, &e.pitch, &e.energy, &e.alignment}) {
    meta["outputs"][p->filename().string()] = sha256_file(*p);
  }
  write_file(e.meta, meta.dump(2));
}

}  // namespace

PreprocessResult preprocess_corpus(const ExperimentConfig& cfg,
                                   const fs::path& out_dir_arg) {
  if (cfg.data.corpus_root.empty()) throw Error("data.corpus_root is not set");
  if (cfg.data.lexicon.empty()) throw Error("data.lexicon is not set");
  const std::set<std::string> accented(cfg.data.accented_speakers.begin(),
                                       cfg.data.accented_speakers.end());
  // Manifests hold absolute paths so they stay valid from any working dir.
  const fs::path out_dir = fs::absolute(out_dir_arg);
  PreprocessResult result;
  result.records = build_manifest(fs::absolute(cfg.data.corpus_root), accented);
  const Lexicon lexicon = load_lexicon(cfg.data.lexicon);

  // Phones first, so every missing word is reported in one go.
  std::vector<std::vector<int>> phones(result.records.size());
  std::set<std::string> oov;
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    try {
      phones[i] = text_to_phones(result.records[i].text, lexicon).phone_ids;
    } catch (const OovError& e) {
      oov.insert(e.words().begin(), e.words().end());
    }
  }
  if (!oov.empty()) throw OovError({oov.begin(), oov.end()});

  const fs::path cache_dir = out_dir / "features";
  fs::create_directories(cache_dir);
  nlohmann::json frontend;
  frontend["mel"] = cfg.mel;
  frontend["prosody"] = to_json(cfg)["prosody"];
  frontend["normalizer"] = kTextNormalizerVersion;
  frontend["inventory"] = PhoneInventory::arpabet().size();

  for (std::size_t i = 0; i < result.records.size(); ++i) {
    auto& r = result.records[i];
    try {
      const CacheEntry e = cache_entry(cache_dir, r.utt_id);
      const std::string key = input_key(r, cfg, frontend);
      if (cache_valid(e, key)) {
        ++result.skipped;
      } else {
        compute_entry(r, cfg, phones[i], e, key);
        ++result.computed;
      }
      r.mel_path = e.mel;
      r.pitch_path = e.pitch;
      r.energy_path = e.energy;
      r.alignment_path = e.alignment;
    } catch (const std::exception& ex) {
      throw Error("utterance " + r.utt_id + ": " + ex.what());
    }
  }

  result.split = split_manifest(result.records, cfg.data.split.n_train,
                                cfg.data.split.n_val, cfg.data.split.n_test,
                                cfg.data.split.seed);
  write_manifest(out_dir / "manifest.jsonl", result.records);
  write_manifest(out_dir / "manifest_train.jsonl", result.split.train);
  write_manifest(out_dir / "manifest_val.jsonl", result.split.val);
  write_manifest(out_dir / "manifest_test.jsonl", result.split.test);
  spdlog::info("preprocess: {} utterances ({} computed, {} cached)",
               result.records.size(), result.computed, result.skipped);
  return result;
}

std::vector<UtteranceRecord> load_split(const fs::path& data_dir,
                                        const std::string& name) {
  const auto path = data_dir / ("manifest_" + name + ".jsonl");
  if (!fs::exists(path)) {
    throw Error("no " + name + " manifest in " + data_dir.string() +
                " (run preprocess first)");
  }
  auto records = read_manifest(path);
  check_manifest_files(records);
  return records;
}

std::vector<Example> load_examples(const std::vector<UtteranceRecord>& records,
                                   FeatureKind kind,
                                   Eigen::Index pretrained_dim) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(load_example(r, kind, pretrained_dim));
  return out;
}

ModelConfig derive_model_config(const ExperimentConfig& cfg,
                                const std::vector<Example>& train) {
  ModelConfig m = cfg.model;
  m.n_mels = cfg.mel.n_mels;
  m.n_phones = PhoneInventory::arpabet().size();
  for (const auto& ex : train) m.n_speakers = std::max(m.n_speakers, ex.speaker_id + 1);
  if (cfg.data.auto_energy_range && !train.empty()) fit_energy_range(train, m);
  m.validate();
  return m;
}

StageResult train_stage(const ExperimentConfig& cfg,
                        const nlohmann::json& effective,
                        const TrainRequest& req) {
  const StageConfig& stage = cfg.stage(req.stage);
  std::optional<Checkpoint> init;
  if (!req.init.empty()) init = load_checkpoint(req.init);
  if (req.stage > 1 && !init) {
    throw Error(req.stage == 2
                    ? "stage 2 requires a stage-1 checkpoint (--init)"
                    : "stage 3 requires a stage-2 checkpoint (--init)");
  }

  // Stage 1 never reads the speech-encoder input, so it always loads mel.
  const FeatureKind kind =
      req.stage == 1 ? FeatureKind::kMel : cfg.data.feature_kind;
  const auto train_records = load_split(req.data_dir, "train");
  const auto val_records = load_split(req.data_dir, "val");
  const Eigen::Index pretrained_dim =
      init ? init->model.pretrained_dim : cfg.model.pretrained_dim;
  const auto train = load_examples(train_records, kind, pretrained_dim);
  const auto val = load_examples(val_records, kind, pretrained_dim);

  const ModelConfig mcfg = init ? init->model : derive_model_config(cfg, train);
  AccentModel model(mcfg, cfg.seed);

  const fs::path out_dir = req.run_dir / ("stage" + std::to_string(req.stage));
  fs::create_directories(out_dir);
  nlohmann::json echo = effective;
  echo["resolved_model"] = mcfg;
  write_file(out_dir / "config.json", echo.dump(2) + "\n");

  RunStageOptions opts;
  opts.out_dir = out_dir;
  opts.seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(req.stage);
  opts.feature_kind = kind;
  opts.config_echo = echo;
  opts.init = init ? &*init : nullptr;
  opts.allow_skip_stage2 = req.allow_skip_stage2;
  opts.on_log = [](const nlohmann::json& rec) {
    spdlog::info("{}", rec.dump());
  };
  return run_stage(stage, model, train, val, opts);
}

EvalReport evaluate_checkpoint(const ExperimentConfig& cfg,
                               const fs::path& checkpoint,
                               const fs::path& data_dir,
                               const std::string& split_name,
                               const fs::path& out_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Converter converter(ckpt);
  EvalOptions opts;
  opts.vocoder_cmd = cfg.inference.vocoder_cmd;
  opts.asr_cmd = cfg.eval.asr_cmd;
  opts.out_dir = out_dir;
  opts.workers = cfg.eval.workers;
  opts.pretrained_dim = ckpt.model.pretrained_dim;
  opts.copy_prosody = cfg.inference.copy_prosody;
  auto records = load_split(data_dir, split_name);
  // WER is reported for accented speakers only.
  records.erase(std::remove_if(records.begin(), records.end(),
                               [](const UtteranceRecord& r) {
                                 return r.accent != AccentTag::kAccented;
                               }),
                records.end());
  if (records.empty()) {
    throw Error("no accented utterances in the " + split_name + " split");
  }
  auto report = evaluate_corpus(records, converter, opts);
  nlohmann::json meta = {{"checkpoint", checkpoint.string()},
                         {"stage", ckpt.stage},
                         {"lineage", ckpt.lineage},
                         {"split", split_name}};
  write_file(out_dir / "report_meta.json", meta.dump(2) + "\n");
  return report;
}

}  // namespace accent
