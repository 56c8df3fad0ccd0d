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

#include "accent/config.h"

#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>

#include "accent/error.h"
#include "accent/util.h"

extern char** environ;

namespace accent {

void to_json(nlohmann::json& j, const MelConfig& c) {
  j = {{"sample_rate_hz", c.sample_rate_hz}, {"n_fft", c.n_fft},
       {"hop_length", c.hop_length},         {"win_length", c.win_length},
       {"n_mels", c.n_mels},                 {"fmin_hz", c.fmin_hz},
       {"fmax_hz", c.fmax_hz},               {"log_floor", c.log_floor},
       {"center", c.center}};
}

void from_json(const nlohmann::json& j, MelConfig& c) {
  const MelConfig d;
  c.sample_rate_hz = j.value("sample_rate_hz", d.sample_rate_hz);
  c.n_fft = j.value("n_fft", d.n_fft);
  c.hop_length = j.value("hop_length", d.hop_length);
  c.win_length = j.value("win_length", d.win_length);
  c.n_mels = j.value("n_mels", d.n_mels);
  c.fmin_hz = j.value("fmin_hz", d.fmin_hz);
  c.fmax_hz = j.value("fmax_hz", d.fmax_hz);
  c.log_floor = j.value("log_floor", d.log_floor);
  c.center = j.value("center", d.center);
}

namespace {

nlohmann::json prosody_json(const ProsodyConfig& c) {
  return {{"f0_min_hz", c.f0_min_hz},
          {"f0_max_hz", c.f0_max_hz},
          {"voicing_threshold", c.voicing_threshold}};
}

ProsodyConfig prosody_from(const nlohmann::json& j) {
  ProsodyConfig c;
  c.f0_min_hz = j.value("f0_min_hz", c.f0_min_hz);
  c.f0_max_hz = j.value("f0_max_hz", c.f0_max_hz);
  c.voicing_threshold = j.value("voicing_threshold", c.voicing_threshold);
  return c;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

const StageConfig& ExperimentConfig::stage(int k) const {
  switch (k) {
    case 1:
      return stage1;
    case 2:
      return stage2;
    case 3:
      return stage3;
  }
  throw Error("stage must be 1, 2 or 3 (got " + std::to_string(k) + ")");
}

StageConfig& ExperimentConfig::stage(int k) {
  return const_cast<StageConfig&>(std::as_const(*this).stage(k));
}

void ExperimentConfig::validate() const {
  mel.validate();
  model.validate();
  stage1.validate();
  stage2.validate();
  stage3.validate();
  if (stage1.stage != 1 || stage2.stage != 2 || stage3.stage != 3) {
    throw Error("train.stageK.stage must equal K");
  }
  if (model.n_mels != mel.n_mels) {
    throw Error("model.n_mels must equal mel.n_mels");
  }
  if (data.pretrained_frame_rate_hz <= 0.0) {
    throw Error("data.pretrained_frame_rate_hz must be positive");
  }
  if (eval.workers < 1) throw Error("eval.workers must be >= 1");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["run_root"] = c.run_root.string();
  j["mel"] = c.mel;
  j["prosody"] = prosody_json(c.prosody);
  j["model"] = c.model;
  j["data"] = {{"corpus_root", c.data.corpus_root.string()},
               {"lexicon", c.data.lexicon.string()},
               {"accented_speakers", c.data.accented_speakers},
               {"split",
                {{"n_train", c.data.split.n_train},
                 {"n_val", c.data.split.n_val},
                 {"n_test", c.data.split.n_test},
                 {"seed", c.data.split.seed}}},
               {"feature_kind", to_string(c.data.feature_kind)},
               {"pretrained_frame_rate_hz", c.data.pretrained_frame_rate_hz},
               {"auto_energy_range", c.data.auto_energy_range},
               {"max_duration_adjust", c.data.max_duration_adjust}};
  j["train"] = {{"stage1", c.stage1}, {"stage2", c.stage2}, {"stage3", c.stage3}};
  j["inference"] = {{"vocoder_cmd", c.inference.vocoder_cmd},
                    {"feature_cmd", c.inference.feature_cmd},
                    {"copy_prosody", c.inference.copy_prosody}};
  j["eval"] = {{"asr_cmd", c.eval.asr_cmd}, {"workers", c.eval.workers}};
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.run_root = j.value("run_root", c.run_root.string());
    if (j.contains("mel")) c.mel = j.at("mel").get<MelConfig>();
    if (j.contains("prosody")) c.prosody = prosody_from(j.at("prosody"));
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.corpus_root = d.value("corpus_root", std::string());
      c.data.lexicon = d.value("lexicon", std::string());
      c.data.accented_speakers =
          d.value("accented_speakers", std::vector<std::string>{});
      if (d.contains("split")) {
        const auto& s = d.at("split");
        c.data.split.n_train = s.value("n_train", c.data.split.n_train);
        c.data.split.n_val = s.value("n_val", c.data.split.n_val);
        c.data.split.n_test = s.value("n_test", c.data.split.n_test);
        c.data.split.seed = s.value("seed", c.data.split.seed);
      }
      c.data.feature_kind =
          feature_kind_from_string(d.value("feature_kind", std::string("mel")));
      c.data.pretrained_frame_rate_hz =
          d.value("pretrained_frame_rate_hz", c.data.pretrained_frame_rate_hz);
      c.data.auto_energy_range =
          d.value("auto_energy_range", c.data.auto_energy_range);
      c.data.max_duration_adjust =
          d.value("max_duration_adjust", c.data.max_duration_adjust);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      for (int k = 1; k <= 3; ++k) {
        const std::string key = "stage" + std::to_string(k);
        if (!t.contains(key)) continue;
        nlohmann::json s = t.at(key);
        s["stage"] = k;
        c.stage(k) = s.get<StageConfig>();
      }
    }
    if (j.contains("inference")) {
      const auto& i = j.at("inference");
      c.inference.vocoder_cmd = i.value("vocoder_cmd", std::string());
      c.inference.feature_cmd = i.value("feature_cmd", std::string());
      c.inference.copy_prosody = i.value("copy_prosody", false);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval.asr_cmd = e.value("asr_cmd", std::string());
      c.eval.workers = e.value("workers", c.eval.workers);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

void merge_json(nlohmann::json& base, const nlohmann::json& overlay) {
  if (!base.is_object() || !overlay.is_object()) {
    base = overlay;
    return;
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() &&
        it.value().is_object()) {
      merge_json(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

void set_json_path(nlohmann::json& j, const std::string& dotted_key,
                   const std::string& value_text) {
  if (dotted_key.empty()) throw Error("empty config key");
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(value_text);
  } catch (const nlohmann::json::exception&) {
    value = value_text;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot - start);
    if (part.empty()) throw Error("malformed config key '" + dotted_key + "'");
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

nlohmann::json env_overrides(const std::map<std::string, std::string>& env) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, value] : env) {
    if (name.rfind("AC_", 0) != 0 || name.size() <= 3) continue;
    std::string key;
    const std::string rest = name.substr(3);
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (rest.compare(i, 2, "__") == 0) {
        key.push_back('.');
        ++i;
      } else {
        key.push_back(rest[i]);
      }
    }
    set_json_path(out, lower(key), value);
  }
  return out;
}

std::map<std::string, std::string> current_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq != std::string::npos) env.emplace(entry.substr(0, eq), entry.substr(eq + 1));
  }
  return env;
}

nlohmann::json resolve_config(const std::filesystem::path& file,
                              const std::map<std::string, std::string>& env,
                              const std::vector<std::string>& assignments) {
  nlohmann::json j = to_json(ExperimentConfig{});
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw Error("cannot open config " + file.string());
    try {
      merge_json(j, nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
      throw Error("invalid config " + file.string() + ": " + e.what());
    }
  }
  merge_json(j, env_overrides(env));
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) {
      throw Error("override '" + a + "' is not of the form key=value");
    }
    set_json_path(j, a.substr(0, eq), a.substr(eq + 1));
  }
  // Normalize through the typed config so the echo lists every value.
  return to_json(config_from_json(j));
}

std::string config_hash(const nlohmann::json& effective) {
  return sha256_hex(effective.dump()).substr(0, 12);
}

std::filesystem::path default_run_dir(const ExperimentConfig& cfg,
                                      const nlohmann::json& effective) {
  const auto now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  return cfg.run_root / (std::string(stamp) + "-" + config_hash(effective));
}

}  // namespace accent
