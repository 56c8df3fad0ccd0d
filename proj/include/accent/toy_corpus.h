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

// Deterministic synthetic corpus for smoke tests and the toy experiments.
//
// Every speaker reads the same scripted sentences over a small lexicon.
// Voiced phones are harmonic complexes shaped by per-phone formants at the
// speaker's F0; fricatives and stops are shaped noise; word boundaries are
// short silences. Accented speakers realise vowels with shifted formants and
// stretched durations. Aligner durations are exact by construction, and a
// stand-in "pretrained encoder" output at its own frame rate encodes phone
// identity (speaker- and accent-independent) plus a little noise.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace accent {

struct ToyCorpusConfig {
  int native_speakers = 2;
  int accented_speakers = 2;
  int sentences = 12;  // read by every speaker
  int sample_rate_hz = 16000;
  int hop_length = 200;
  double pretrained_frame_rate_hz = 50.0;
  int pretrained_dim = 24;
  std::uint64_t seed = 7;
};

struct ToyCorpusInfo {
  std::filesystem::path root;
  std::filesystem::path lexicon;
  std::vector<std::string> native;
  std::vector<std::string> accented;
  std::size_t utterances = 0;
};

// Writes root/<speaker>/<stem>.{wav,txt,dur,pre.acft} and root/lexicon.txt.
ToyCorpusInfo write_toy_corpus(const std::filesystem::path& root,
                               const ToyCorpusConfig& cfg = {});

// Small experiment config matched to the toy corpus (16 kHz, 32 mels, a
// d = 32 model). Callers still set data.corpus_root / data.lexicon.
nlohmann::json toy_experiment_config(const ToyCorpusInfo& info,
                                     const ToyCorpusConfig& cfg = {});

}  // namespace accent
