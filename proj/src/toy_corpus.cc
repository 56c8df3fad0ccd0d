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

#include "accent/toy_corpus.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "accent/error.h"
#include "accent/features.h"
#include "accent/phones.h"
#include "accent/random.h"
#include "accent/util.h"
#include "accent/wav.h"

namespace fs = std::filesystem;

namespace accent {
namespace {

enum class Kind { kVowel, kSonorant, kFricative, kStop, kSilence };

struct PhoneSpec {
  Kind kind;
  double f1, f2, f3;  // formants (voiced) or band centre / width (noise)
  int frames;
};

const std::map<std::string, PhoneSpec>& phone_specs() {
  static const std::map<std::string, PhoneSpec> specs = {
      {"AE", {Kind::kVowel, 660, 1720, 2410, 6}},
      {"IY", {Kind::kVowel, 270, 2290, 3010, 6}},
      {"AO", {Kind::kVowel, 570, 840, 2410, 6}},
      {"UW", {Kind::kVowel, 300, 870, 2240, 6}},
      {"EY", {Kind::kVowel, 480, 2100, 2700, 6}},
      {"AH", {Kind::kVowel, 520, 1190, 2390, 5}},
      {"EH", {Kind::kVowel, 530, 1840, 2480, 5}},
      {"IH", {Kind::kVowel, 390, 1990, 2550, 5}},
      {"AW", {Kind::kVowel, 700, 1200, 2500, 7}},
      {"M", {Kind::kSonorant, 250, 1000, 2200, 4}},
      {"N", {Kind::kSonorant, 250, 1500, 2500, 4}},
      {"L", {Kind::kSonorant, 360, 1300, 2700, 4}},
      {"S", {Kind::kFricative, 5500, 1500, 0, 5}},
      {"T", {Kind::kStop, 3500, 1500, 0, 3}},
      {"K", {Kind::kStop, 2200, 800, 0, 3}},
      {"<wb>", {Kind::kSilence, 0, 0, 0, 2}},
  };
  return specs;
}

const std::vector<std::pair<std::string, std::string>>& toy_lexicon() {
  static const std::vector<std::pair<std::string, std::string>> lex = {
      {"sam", "S AE M"},  {"mean", "M IY N"}, {"tall", "T AO L"},
      {"keen", "K IY N"}, {"moon", "M UW N"}, {"seat", "S IY T"},
      {"late", "L EY T"}, {"son", "S AH N"},  {"ten", "T EH N"},
      {"kill", "K IH L"}, {"now", "N AW"},    {"soon", "S UW N"},
  };
  return lex;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    const auto j = s.find(' ', i);
    if (i < s.size()) out.push_back(s.substr(i, j - i));
    i = j == std::string::npos ? s.size() : j;
  }
  return out;
}

struct Speaker {
  std::string name;
  bool accented;
  double f0;
  int vowel_stretch;
};

// One sentence -> phone symbols with word boundaries, matching
// text_to_phones() on the same text.
std::vector<std::string> sentence_phones(const std::vector<std::string>& words,
                                         const std::map<std::string, std::string>& lex) {
  std::vector<std::string> out;
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (w > 0) out.push_back("<wb>");
    for (const auto& p : split_ws(lex.at(words[w]))) out.push_back(p);
  }
  return out;
}

void add_voiced(std::vector<float>& y, std::size_t begin, std::size_t end,
                const PhoneSpec& spec, const Speaker& spk, int sr,
                double amplitude, double& phase) {
  double f1 = spec.f1, f2 = spec.f2;
  if (spk.accented && spec.kind == Kind::kVowel) {
    // Systematic vowel realisation shift for the accented speakers.
    f1 *= 1.25;
    f2 *= 0.8;
  }
  const double formants[3] = {f1, f2, spec.f3};
  const double gains[3] = {1.0, 0.6, 0.3};
  std::vector<double> seg(end - begin, 0.0);
  for (std::size_t n = begin; n < end; ++n) {
    const double t = static_cast<double>(n) / sr;
    const double f0 = spk.f0 * (1.0 + 0.04 * std::sin(2.0 * std::numbers::pi * 1.3 * t));
    phase += 2.0 * std::numbers::pi * f0 / sr;
    double v = 0.0;
    for (int k = 1; k * f0 < 0.45 * sr && k * f0 < 7000.0; ++k) {
      double a = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double z = (k * f0 - formants[j]) / (80.0 + 0.1 * formants[j]);
        a += gains[j] * std::exp(-z * z);
      }
      v += (a + 0.02) * std::sin(k * phase);
    }
    seg[n - begin] = v;
  }
  double peak = 1e-12;
  for (double v : seg) peak = std::max(peak, std::abs(v));
  for (std::size_t i = 0; i < seg.size(); ++i) {
    y[begin + i] += static_cast<float>(amplitude * seg[i] / peak);
  }
}

void add_noise(std::vector<float>& y, std::size_t begin, std::size_t end,
               const PhoneSpec& spec, int sr, double amplitude,
               std::mt19937_64& rng) {
  // Band-limited noise as a sum of random-phase partials.
  constexpr int kPartials = 40;
  double freq[kPartials], ph[kPartials];
  for (int i = 0; i < kPartials; ++i) {
    freq[i] = spec.f1 + (uniform01(rng) - 0.5) * spec.f2;
    ph[i] = 2.0 * std::numbers::pi * uniform01(rng);
  }
  std::size_t start = begin;
  if (spec.kind == Kind::kStop) start = begin + (end - begin) / 2;  // closure
  for (std::size_t n = start; n < end; ++n) {
    const double t = static_cast<double>(n) / sr;
    double v = 0.0;
    for (int i = 0; i < kPartials; ++i) {
      v += std::sin(2.0 * std::numbers::pi * freq[i] * t + ph[i]);
    }
    y[n] += static_cast<float>(amplitude * v / std::sqrt(2.0 * kPartials));
  }
}

void fade(std::vector<float>& y, std::size_t begin, std::size_t end,
          std::size_t ramp) {
  ramp = std::min(ramp, (end - begin) / 2);
  for (std::size_t i = 0; i < ramp; ++i) {
    const float g = static_cast<float>(i) / static_cast<float>(ramp);
    y[begin + i] *= g;
    y[end - 1 - i] *= g;
  }
}

}  // namespace

ToyCorpusInfo write_toy_corpus(const fs::path& root,
                               const ToyCorpusConfig& cfg) {
  if (cfg.native_speakers < 1 || cfg.accented_speakers < 0 ||
      cfg.sentences < 1) {
    throw Error("toy corpus: need at least one speaker and one sentence");
  }
  fs::create_directories(root);
  ToyCorpusInfo info;
  info.root = root;
  info.lexicon = root / "lexicon.txt";

  std::map<std::string, std::string> lex;
  std::string lex_text;
  for (const auto& [w, p] : toy_lexicon()) {
    lex.emplace(w, p);
    lex_text += w + "\t" + p + "\n";
  }
  write_file(info.lexicon, lex_text);

  // Scripted sentences: distinct 2-4 word combinations.
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<std::string>> sentences;
  std::set<std::vector<std::string>> seen;
  while (static_cast<int>(sentences.size()) < cfg.sentences) {
    const int n = 2 + static_cast<int>(uniform_below(rng, 3));
    std::vector<std::string> words;
    for (int i = 0; i < n; ++i) {
      words.push_back(toy_lexicon()[uniform_below(rng, toy_lexicon().size())].first);
    }
    if (seen.insert(words).second) sentences.push_back(words);
  }

  std::vector<Speaker> speakers;
  for (int i = 0; i < cfg.native_speakers; ++i) {
    speakers.push_back({"nat" + std::to_string(i + 1), false, 110.0 + 80.0 * i, 0});
    info.native.push_back(speakers.back().name);
  }
  for (int i = 0; i < cfg.accented_speakers; ++i) {
    speakers.push_back({"acc" + std::to_string(i + 1), true, 130.0 + 50.0 * i, 2});
    info.accented.push_back(speakers.back().name);
  }

  // Stand-in pretrained-encoder embeddings: one fixed vector per phone.
  const auto& inventory = PhoneInventory::arpabet();
  std::mt19937_64 emb_rng(cfg.seed ^ 0xabcdefULL);
  Matrix phone_emb(inventory.size(), cfg.pretrained_dim);
  for (Eigen::Index i = 0; i < phone_emb.size(); ++i) {
    phone_emb.data()[i] = 2.0 * uniform01(emb_rng) - 1.0;
  }

  const int sr = cfg.sample_rate_hz;
  const int hop = cfg.hop_length;
  for (std::size_t s = 0; s < speakers.size(); ++s) {
    const Speaker& spk = speakers[s];
    const fs::path dir = root / spk.name;
    fs::create_directories(dir);
    for (std::size_t k = 0; k < sentences.size(); ++k) {
      char stem[16];
      std::snprintf(stem, sizeof stem, "s%02zu", k + 1);
      std::mt19937_64 utt_rng(cfg.seed * 7919 + s * 131 + k);

      const auto phones = sentence_phones(sentences[k], lex);
      std::vector<int> durations;
      for (std::size_t i = 0; i < phones.size(); ++i) {
        const auto& spec = phone_specs().at(phones[i]);
        int d = spec.frames + static_cast<int>(uniform_below(utt_rng, 3)) - 1;
        if (spec.kind == Kind::kVowel) d += spk.vowel_stretch;
        if (spec.kind == Kind::kSilence) d = spec.frames;
        durations.push_back(std::max(d, 1));
      }
      int total = 0;
      for (int d : durations) total += d;
      // Centre-padded framing yields 1 + floor(len / hop) frames.
      const std::size_t len =
          static_cast<std::size_t>(total - 1) * hop + static_cast<std::size_t>(hop / 2);
      std::vector<float> y(len, 0.0f);

      double phase = 0.0;
      int frame = 0;
      std::vector<int> frame_phone(static_cast<std::size_t>(total));
      for (std::size_t i = 0; i < phones.size(); ++i) {
        const auto& spec = phone_specs().at(phones[i]);
        const long a = static_cast<long>(frame) * hop - hop / 2;
        const long b = static_cast<long>(frame + durations[i]) * hop - hop / 2;
        const std::size_t begin = static_cast<std::size_t>(std::max(0L, a));
        const std::size_t end = std::min(len, static_cast<std::size_t>(std::max(0L, b)));
        for (int f = frame; f < frame + durations[i]; ++f) {
          frame_phone[static_cast<std::size_t>(f)] = inventory.id(phones[i]);
        }
        frame += durations[i];
        if (end <= begin) continue;
        switch (spec.kind) {
          case Kind::kVowel:
            add_voiced(y, begin, end, spec, spk, sr, 0.35, phase);
            break;
          case Kind::kSonorant:
            add_voiced(y, begin, end, spec, spk, sr, 0.18, phase);
            break;
          case Kind::kFricative:
          case Kind::kStop:
            add_noise(y, begin, end, spec, sr, 0.12, utt_rng);
            break;
          case Kind::kSilence:
            break;
        }
        fade(y, begin, end, static_cast<std::size_t>(sr / 200));
      }
      write_wav(dir / (std::string(stem) + ".wav"), Waveform{y, sr});

      std::string text;
      for (const auto& w : sentences[k]) text += (text.empty() ? "" : " ") + w;
      // Sentence-initial capital and a full stop exercise normalization.
      text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
      write_file(dir / (std::string(stem) + ".txt"), text + ".\n");

      std::string dur_text;
      for (int d : durations) dur_text += std::to_string(d) + " ";
      dur_text.back() = '\n';
      write_file(dir / (std::string(stem) + ".dur"), dur_text);

      // Pretrained features at their own frame rate.
      const double seconds = static_cast<double>(len) / sr;
      const auto tp = std::max<Eigen::Index>(
          1, std::lround(seconds * cfg.pretrained_frame_rate_hz));
      Matrix pre(tp, cfg.pretrained_dim);
      for (Eigen::Index j = 0; j < tp; ++j) {
        const double t = (static_cast<double>(j) + 0.5) / cfg.pretrained_frame_rate_hz;
        const auto f = std::clamp<long>(std::lround(t * sr / hop), 0, total - 1);
        pre.row(j) = phone_emb.row(frame_phone[static_cast<std::size_t>(f)]);
        for (Eigen::Index c = 0; c < pre.cols(); ++c) {
          pre(j, c) += 0.05 * (2.0 * uniform01(utt_rng) - 1.0);
        }
      }
      save_matrix(dir / (std::string(stem) + ".pre.acft"), pre);
      ++info.utterances;
    }
  }
  return info;
}

nlohmann::json toy_experiment_config(const ToyCorpusInfo& info,
                                     const ToyCorpusConfig& cfg) {
  nlohmann::json j;
  j["seed"] = 11;
  j["mel"] = {{"sample_rate_hz", cfg.sample_rate_hz},
              {"n_fft", 1024},
              {"hop_length", cfg.hop_length},
              {"win_length", 4 * cfg.hop_length},
              {"n_mels", 32},
              {"fmin_hz", 0.0},
              {"fmax_hz", cfg.sample_rate_hz / 2.0}};
  j["model"] = {{"hidden_dim", 32},       {"heads", 2},
                {"encoder_layers", 1},    {"speech_encoder_layers", 2},
                {"decoder_layers", 1},    {"ffn_dim", 64},
                {"ffn_kernel", 3},        {"dropout", 0.1},
                {"predictor_hidden", 32}, {"predictor_kernel", 3},
                {"predictor_dropout", 0.2}, {"postnet_dim", 32},
                {"postnet_kernel", 3},    {"postnet_layers", 5},
                {"n_mels", 32},           {"n_bins", 16},
                {"pretrained_dim", cfg.pretrained_dim}};
  j["data"] = {{"corpus_root", info.root.string()},
               {"lexicon", info.lexicon.string()},
               {"accented_speakers", info.accented},
               {"split", {{"n_train", 8}, {"n_val", 2}, {"n_test", 2}, {"seed", 1234}}},
               {"pretrained_frame_rate_hz", cfg.pretrained_frame_rate_hz}};
  j["train"] = {
      {"stage1",
       {{"max_steps", 1500}, {"batch_size", 8}, {"warmup_steps", 300},
        {"lr_scale", 0.25}, {"val_every", 250}, {"log_every", 50}}},
      {"stage2",
       {{"max_steps", 600}, {"batch_size", 8}, {"warmup_steps", 150},
        {"lr_scale", 0.25}, {"val_every", 100}, {"log_every", 50}}},
      {"stage3",
       {{"max_steps", 200}, {"batch_size", 8}, {"constant_lr", 1e-4},
        {"val_every", 50}, {"log_every", 25}}}};
  return j;
}

}  // namespace accent
