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

#include "accent/eval.h"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "accent/error.h"
#include "accent/text_norm.h"
#include "accent/util.h"

namespace accent {

std::size_t edit_distance(const std::vector<std::string>& ref,
                          const std::vector<std::string>& hyp) {
  // Single-row Levenshtein.
  std::vector<std::size_t> row(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({up + 1, row[j - 1] + 1,
                         diag + (ref[i - 1] == hyp[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[hyp.size()];
}

double wer(const std::vector<std::string>& ref,
           const std::vector<std::string>& hyp) {
  if (ref.empty()) {
    if (hyp.empty()) return 0.0;
    throw Error("WER undefined: empty reference with a non-empty hypothesis");
  }
  return static_cast<double>(edit_distance(ref, hyp)) /
         static_cast<double>(ref.size());
}

Transcript transcribe_adapter(const std::filesystem::path& audio,
                              const std::string& adapter_cmd) {
  Transcript t;
  if (adapter_cmd.empty()) {
    t.error = "no ASR adapter configured";
    return t;
  }
  CommandResult r;
  try {
    r = run_command(
        expand_command(adapter_cmd, {{"audio", audio.string()}}, {"audio"}));
  } catch (const std::exception& e) {
    t.error = e.what();
    return t;
  }
  if (r.exit_code != 0) {
    t.error = "ASR adapter exited with status " + std::to_string(r.exit_code) +
              ": " + tail_excerpt(r.err);
    return t;
  }
  std::istringstream words(r.out);
  std::string w;
  while (words >> w) {
    if (!t.text.empty()) t.text.push_back(' ');
    t.text += w;
  }
  if (t.text.empty()) {
    t.error = "ASR adapter produced no transcript";
    return t;
  }
  t.ok = true;
  return t;
}

UtteranceScore score_utterance(const std::string& utt_id,
                               const std::string& speaker,
                               const std::string& reference,
                               const std::string& hypothesis) {
  UtteranceScore s;
  s.utt_id = utt_id;
  s.speaker = speaker;
  s.reference = reference;
  s.hypothesis = hypothesis;
  const auto ref = normalize_words(reference);
  const auto hyp = normalize_words(hypothesis);
  if (ref.empty()) {
    s.error = "empty reference transcript";
    return s;
  }
  s.errors = edit_distance(ref, hyp);
  s.ref_words = ref.size();
  s.ok = true;
  return s;
}

EvalReport aggregate_report(const std::vector<UtteranceScore>& scores) {
  EvalReport r;
  r.normalizer = std::string(kTextNormalizerVersion);
  r.utterances = scores;
  std::size_t errors = 0, words = 0, n_align = 0;
  double align = 0.0;
  for (const auto& s : scores) {
    if (s.has_alignment) {
      align += s.alignment_distance;
      ++n_align;
    }
    if (!s.ok) {
      r.failures.push_back(s);
      continue;
    }
    errors += s.errors;
    words += s.ref_words;
    auto& sp = r.per_speaker[s.speaker];
    sp.errors += s.errors;
    sp.words += s.ref_words;
    ++sp.utterances;
  }
  for (auto& [_, sp] : r.per_speaker) {
    sp.wer = sp.words ? static_cast<double>(sp.errors) / sp.words : 0.0;
  }
  r.corpus_wer = words ? static_cast<double>(errors) / words : 0.0;
  r.alignment_distance_mean = n_align ? align / n_align : 0.0;
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_speaker = nlohmann::json::object();
  for (const auto& [name, sp] : r.per_speaker) {
    per_speaker[name] = {{"wer", sp.wer},
                         {"errors", sp.errors},
                         {"words", sp.words},
                         {"utterances", sp.utterances}};
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : r.failures) {
    failures.push_back({{"utt_id", f.utt_id}, {"speaker", f.speaker},
                        {"error", f.error}});
  }
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& s : r.utterances) {
    nlohmann::json u = {{"utt_id", s.utt_id},         {"speaker", s.speaker},
                        {"ok", s.ok},                 {"reference", s.reference},
                        {"hypothesis", s.hypothesis}, {"errors", s.errors},
                        {"ref_words", s.ref_words}};
    if (s.has_alignment) u["alignment_distance"] = s.alignment_distance;
    if (!s.ok) u["error"] = s.error;
    utts.push_back(std::move(u));
  }
  return {{"corpus_wer", r.corpus_wer},
          {"per_speaker", per_speaker},
          {"failures", failures},
          {"alignment_distance_mean", r.alignment_distance_mean},
          {"normalizer", r.normalizer},
          {"utterances", utts}};
}

EvalReport evaluate_corpus(const std::vector<UtteranceRecord>& records,
                           const Converter& converter,
                           const EvalOptions& opts) {
  if (opts.vocoder_cmd.empty()) {
    throw Error("no vocoder configured: evaluation needs waveforms for ASR");
  }
  if (opts.asr_cmd.empty()) throw Error("no ASR adapter configured");
  std::filesystem::create_directories(opts.out_dir);

  std::vector<UtteranceScore> scores(records.size());
  auto work = [&](std::size_t i) {
    const auto& rec = records[i];
    UtteranceScore& s = scores[i];
    try {
      const Example ex =
          load_example(rec, converter.feature_kind(), opts.pretrained_dim);
      AcousticFeatures feats{ex.features, converter.feature_kind(), 0.0};
      ConvertOptions copts;
      if (opts.copy_prosody) {
        copts.copy_prosody = true;
        copts.source_prosody = ProsodyContours{ex.pitch, ex.energy};
      }
      const auto mel = converter.convert(feats, rec.speaker_id, copts);
      const double align =
          converter.alignment_distance(feats, ex.phone_ids, ex.durations);
      const auto wav = invoke_vocoder_adapter(
          mel.frames, opts.vocoder_cmd, opts.out_dir / "audio" / (rec.utt_id + ".wav"));
      const auto t = transcribe_adapter(wav, opts.asr_cmd);
      if (t.ok) {
        s = score_utterance(rec.utt_id, rec.speaker, rec.text, t.text);
      } else {
        s.error = t.error;
      }
      s.alignment_distance = align;
      s.has_alignment = true;
    } catch (const std::exception& e) {
      s.ok = false;
      s.error = e.what();
    }
    s.utt_id = rec.utt_id;
    s.speaker = rec.speaker;
    s.reference = rec.text;
    if (!s.ok) spdlog::warn("evaluation of {} failed: {}", rec.utt_id, s.error);
  };

  const int workers = std::max(1, opts.workers);
  if (workers == 1 || records.size() < 2) {
    for (std::size_t i = 0; i < records.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < records.size(); i = next++) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  EvalReport report = aggregate_report(scores);
  std::ofstream os(opts.out_dir / "report.json", std::ios::trunc);
  os << to_json(report).dump(2) << '\n';
  if (!os) throw Error("cannot write evaluation report");
  return report;
}

}  // namespace accent
