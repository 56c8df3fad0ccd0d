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

#include "accent/data.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "accent/error.h"
#include "accent/random.h"
#include "accent/text_norm.h"

namespace accent {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(AccentTag tag) {
  return tag == AccentTag::kNative ? "native" : "accented";
}

AccentTag accent_tag_from_string(std::string_view name) {
  if (name == "native") return AccentTag::kNative;
  if (name == "accented") return AccentTag::kAccented;
  throw Error("unknown accent tag '" + std::string(name) + "'");
}

void to_json(json& j, const UtteranceRecord& r) {
  j = json{{"utt_id", r.utt_id},
           {"speaker", r.speaker},
           {"speaker_id", r.speaker_id},
           {"accent", std::string(to_string(r.accent))},
           {"text", r.text},
           {"wav", r.wav_path.string()},
           {"durations", r.durations_path.string()},
           {"pretrained", r.pretrained_path.string()},
           {"mel", r.mel_path.string()},
           {"pitch", r.pitch_path.string()},
           {"energy", r.energy_path.string()},
           {"alignment", r.alignment_path.string()}};
}

void from_json(const json& j, UtteranceRecord& r) {
  r.utt_id = j.at("utt_id").get<std::string>();
  r.speaker = j.value("speaker", std::string());
  r.speaker_id = j.at("speaker_id").get<int>();
  r.accent = accent_tag_from_string(j.value("accent", std::string("native")));
  r.text = j.at("text").get<std::string>();
  r.wav_path = j.value("wav", std::string());
  r.durations_path = j.value("durations", std::string());
  r.pretrained_path = j.value("pretrained", std::string());
  r.mel_path = j.value("mel", std::string());
  r.pitch_path = j.value("pitch", std::string());
  r.energy_path = j.value("energy", std::string());
  r.alignment_path = j.value("alignment", std::string());
}

namespace {

std::string read_text_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  std::string s = ss.str();
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::vector<UtteranceRecord> build_manifest(
    const fs::path& corpus_root, const std::set<std::string>& accented_speakers) {
  if (!fs::is_directory(corpus_root)) {
    throw Error("corpus root is not a directory: " + corpus_root.string());
  }
  std::vector<std::string> speakers;
  for (const auto& entry : fs::directory_iterator(corpus_root)) {
    if (entry.is_directory()) {
      const std::string name = entry.path().filename().string();
      if (!name.empty() && name[0] != '.') speakers.push_back(name);
    }
  }
  std::sort(speakers.begin(), speakers.end());

  std::vector<UtteranceRecord> records;
  std::vector<std::string> unpaired;
  for (std::size_t s = 0; s < speakers.size(); ++s) {
    const fs::path dir = corpus_root / speakers[s];
    std::map<std::string, std::pair<bool, bool>> stems;  // has wav, has txt
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension();
      if (ext == ".wav") stems[entry.path().stem().string()].first = true;
      if (ext == ".txt") stems[entry.path().stem().string()].second = true;
    }
    for (const auto& [stem, has] : stems) {
      const std::string utt_id = speakers[s] + "_" + stem;
      if (!has.first || !has.second) {
        unpaired.push_back(utt_id + (has.first ? " (missing .txt)"
                                               : " (missing .wav)"));
        continue;
      }
      UtteranceRecord r;
      r.utt_id = utt_id;
      r.speaker = speakers[s];
      r.speaker_id = static_cast<int>(s);
      r.accent = accented_speakers.count(speakers[s]) ? AccentTag::kAccented
                                                      : AccentTag::kNative;
      r.wav_path = dir / (stem + ".wav");
      r.text = read_text_file(dir / (stem + ".txt"));
      if (fs::exists(dir / (stem + ".dur"))) {
        r.durations_path = dir / (stem + ".dur");
      }
      if (fs::exists(dir / (stem + ".pre.acft"))) {
        r.pretrained_path = dir / (stem + ".pre.acft");
      }
      records.push_back(std::move(r));
    }
  }
  if (!unpaired.empty()) {
    std::string msg = "unpaired corpus files:";
    for (const auto& u : unpaired) msg += "\n  " + u;
    throw Error(msg);
  }
  for (const auto& name : accented_speakers) {
    if (!std::binary_search(speakers.begin(), speakers.end(), name)) {
      throw Error("accented speaker '" + name + "' not found in corpus");
    }
  }
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.utt_id < b.utt_id; });
  return records;
}

void write_manifest(const fs::path& path,
                    const std::vector<UtteranceRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write manifest " + path.string());
  for (const auto& r : records) os << json(r).dump() << '\n';
}

std::vector<UtteranceRecord> read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read manifest " + path.string());
  std::vector<UtteranceRecord> records;
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(json::parse(line).get<UtteranceRecord>());
    } catch (const json::exception& e) {
      throw Error("manifest " + path.string() + " line " +
                  std::to_string(lineno) + ": " + e.what());
    }
    if (!ids.insert(records.back().utt_id).second) {
      throw Error("duplicate utt_id '" + records.back().utt_id +
                  "' in manifest " + path.string());
    }
  }
  return records;
}

void check_manifest_files(const std::vector<UtteranceRecord>& records) {
  for (const auto& r : records) {
    for (const fs::path* p : {&r.wav_path, &r.durations_path,
                              &r.pretrained_path, &r.mel_path, &r.pitch_path,
                              &r.energy_path, &r.alignment_path}) {
      if (!p->empty() && !fs::exists(*p)) {
        throw Error("utterance " + r.utt_id + ": missing file " + p->string());
      }
    }
  }
}

ManifestSplit split_manifest(std::vector<UtteranceRecord> records,
                             std::size_t n_train, std::size_t n_val,
                             std::size_t n_test, std::uint64_t seed) {
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.utt_id < b.utt_id; });

  std::map<int, std::size_t> per_speaker;
  for (const auto& r : records) ++per_speaker[r.speaker_id];
  const std::size_t need = n_train + n_val + n_test;
  std::string short_msg;
  for (const auto& [spk, count] : per_speaker) {
    if (count < need) {
      short_msg += "\n  speaker " + std::to_string(spk) + ": " +
                   std::to_string(count) + " < " + std::to_string(need);
    }
  }
  if (!short_msg.empty()) {
    throw Error("insufficient utterances for split:" + short_msg);
  }

  // Group by normalized text; the sorted key list is then shuffled so the
  // order only depends on the seed.
  std::map<std::string, std::vector<std::size_t>> by_text;
  for (std::size_t i = 0; i < records.size(); ++i) {
    by_text[normalize_text(records[i].text)].push_back(i);
  }
  std::vector<const std::string*> texts;
  texts.reserve(by_text.size());
  for (const auto& kv : by_text) texts.push_back(&kv.first);
  std::mt19937_64 rng(seed);
  portable_shuffle(texts, rng);

  std::map<int, std::size_t> val_left, test_left;
  for (const auto& [spk, count] : per_speaker) {
    val_left[spk] = n_val;
    test_left[spk] = n_test;
  }
  enum Subset { kTrain, kVal, kTest };
  std::vector<Subset> assign(records.size(), kTrain);
  for (const std::string* text : texts) {
    const auto& members = by_text.at(*text);
    std::map<int, std::size_t> counts;
    for (auto i : members) ++counts[records[i].speaker_id];
    const auto fits = [&](std::map<int, std::size_t>& left) {
      for (const auto& [spk, c] : counts) {
        if (left[spk] < c) return false;
      }
      return true;
    };
    Subset target = kTrain;
    if (fits(val_left)) {
      target = kVal;
      for (const auto& [spk, c] : counts) val_left[spk] -= c;
    } else if (fits(test_left)) {
      target = kTest;
      for (const auto& [spk, c] : counts) test_left[spk] -= c;
    }
    for (auto i : members) assign[i] = target;
  }

  std::string unfilled;
  for (const auto& [spk, left] : val_left) {
    if (left || test_left[spk]) {
      unfilled += "\n  speaker " + std::to_string(spk) + ": val short by " +
                  std::to_string(left) + ", test short by " +
                  std::to_string(test_left[spk]);
    }
  }
  if (!unfilled.empty()) {
    throw Error("cannot fill val/test quotas without text overlap:" +
                unfilled);
  }

  ManifestSplit out;
  std::map<int, std::size_t> train_count;
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (assign[i]) {
      case kTrain:
        ++train_count[records[i].speaker_id];
        out.train.push_back(std::move(records[i]));
        break;
      case kVal:
        out.val.push_back(std::move(records[i]));
        break;
      case kTest:
        out.test.push_back(std::move(records[i]));
        break;
    }
  }
  for (const auto& [spk, count] : per_speaker) {
    if (train_count[spk] < n_train) {
      throw Error("speaker " + std::to_string(spk) + " keeps only " +
                  std::to_string(train_count[spk]) +
                  " training utterances after text-disjoint split, need " +
                  std::to_string(n_train));
    }
  }
  return out;
}

void write_alignment(const fs::path& path, const std::vector<int>& phone_ids,
                     const std::vector<int>& durations) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << json{{"phone_ids", phone_ids}, {"durations", durations}}.dump()
     << '\n';
}

void read_alignment(const fs::path& path, std::vector<int>& phone_ids,
                    std::vector<int>& durations) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path.string());
  try {
    const json j = json::parse(is);
    phone_ids = j.at("phone_ids").get<std::vector<int>>();
    durations = j.at("durations").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw Error("bad alignment file " + path.string() + ": " + e.what());
  }
}

Example load_example(const UtteranceRecord& record, FeatureKind kind,
                     Eigen::Index pretrained_dim) {
  Example ex;
  ex.utt_id = record.utt_id;
  ex.speaker_id = record.speaker_id;
  ex.accent = record.accent;
  ex.text = record.text;
  if (record.mel_path.empty()) {
    throw Error("utterance " + record.utt_id + " has not been preprocessed");
  }
  ex.mel = load_matrix(record.mel_path);
  ex.pitch = load_vector(record.pitch_path);
  ex.energy = load_vector(record.energy_path);
  read_alignment(record.alignment_path, ex.phone_ids, ex.durations);
  const auto frames = ex.mel.rows();
  if (static_cast<Eigen::Index>(ex.pitch.size()) != frames ||
      static_cast<Eigen::Index>(ex.energy.size()) != frames) {
    throw Error("utterance " + record.utt_id +
                ": prosody length differs from mel frame count");
  }
  ex.feature_kind = kind;
  if (kind == FeatureKind::kMel) {
    ex.features = ex.mel;
  } else {
    if (record.pretrained_path.empty()) {
      throw Error("utterance " + record.utt_id +
                  " has no pretrained feature file");
    }
    ex.features = load_pretrained_features(record.pretrained_path, frames,
                                           pretrained_dim)
                      .frames;
  }
  return ex;
}

Batch make_batch(const std::vector<Example>& examples, double pad_value) {
  std::vector<const Example*> ptrs;
  ptrs.reserve(examples.size());
  for (const auto& e : examples) ptrs.push_back(&e);
  return make_batch(ptrs, pad_value);
}

Batch make_batch(const std::vector<const Example*>& examples,
                 double pad_value) {
  if (examples.empty()) throw Error("cannot batch zero examples");
  const Eigen::Index mel_dim = examples.front()->mel.cols();
  const Eigen::Index feat_dim = examples.front()->features.cols();
  const bool has_features = examples.front()->features.size() > 0;
  Batch b;
  for (const Example* e : examples) {
    if (e->mel.cols() != mel_dim) throw Error("mel width mismatch in batch");
    if ((e->features.size() > 0) != has_features ||
        (has_features && e->features.cols() != feat_dim)) {
      throw Error("feature dim mismatch in batch at " + e->utt_id);
    }
    if (has_features && e->features.rows() != e->mel.rows()) {
      throw Error("feature/mel frame count mismatch for " + e->utt_id);
    }
    if (!e->durations.empty() && e->durations.size() != e->phone_ids.size()) {
      throw Error("duration/phone count mismatch for " + e->utt_id);
    }
    b.t_max = std::max(b.t_max, e->num_frames());
    b.n_max = std::max(b.n_max, static_cast<int>(e->phone_ids.size()));
  }
  const int pad_int = static_cast<int>(pad_value);
  for (const Example* e : examples) {
    const int t = e->num_frames();
    const int n = static_cast<int>(e->phone_ids.size());
    b.utt_ids.push_back(e->utt_id);
    b.speaker_ids.push_back(e->speaker_id);
    b.feature_lengths.push_back(t);
    b.phone_lengths.push_back(n);

    Matrix mel = Matrix::Constant(b.t_max, mel_dim, pad_value);
    mel.topRows(t) = e->mel;
    b.mel_targets.push_back(std::move(mel));
    if (has_features) {
      Matrix f = Matrix::Constant(b.t_max, feat_dim, pad_value);
      f.topRows(t) = e->features;
      b.features.push_back(std::move(f));
    }

    std::vector<double> pitch(b.t_max, pad_value), energy(b.t_max, pad_value);
    std::copy(e->pitch.begin(), e->pitch.end(), pitch.begin());
    std::copy(e->energy.begin(), e->energy.end(), energy.begin());
    b.pitch.push_back(std::move(pitch));
    b.energy.push_back(std::move(energy));

    std::vector<int> ids(b.n_max, pad_int), durs(b.n_max, pad_int);
    std::copy(e->phone_ids.begin(), e->phone_ids.end(), ids.begin());
    std::copy(e->durations.begin(), e->durations.end(), durs.begin());
    b.phone_ids.push_back(std::move(ids));
    b.durations.push_back(std::move(durs));

    ag::Mask fm(b.t_max, 0), pm(b.n_max, 0);
    std::fill(fm.begin(), fm.begin() + t, 1);
    std::fill(pm.begin(), pm.begin() + n, 1);
    b.frame_mask.push_back(std::move(fm));
    b.phone_mask.push_back(std::move(pm));
  }
  return b;
}

}  // namespace accent
