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

#include "accent/phones.h"

#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "accent/text_norm.h"

namespace accent {

namespace {

std::string strip_stress(std::string_view symbol) {
  std::string s(symbol);
  while (!s.empty() && std::isdigit(static_cast<unsigned char>(s.back()))) {
    s.pop_back();
  }
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ", ";
    out += w;
  }
  return out;
}

}  // namespace

PhoneInventory::PhoneInventory() {
  symbols_ = {"<pad>", "<wb>", "<sil>",
              "AA", "AE", "AH", "AO", "AW", "AY", "B",  "CH", "D",  "DH",
              "EH", "ER", "EY", "F",  "G",  "HH", "IH", "IY", "JH", "K",
              "L",  "M",  "N",  "NG", "OW", "OY", "P",  "R",  "S",  "SH",
              "T",  "TH", "UH", "UW", "V",  "W",  "Y",  "Z",  "ZH"};
  for (int i = 0; i < size(); ++i) ids_.emplace(symbols_[i], i);
  ids_.emplace("SIL", kSilence);
  ids_.emplace("SP", kSilence);
}

const PhoneInventory& PhoneInventory::arpabet() {
  static const PhoneInventory inventory;
  return inventory;
}

bool PhoneInventory::contains(std::string_view symbol) const {
  return ids_.count(strip_stress(symbol)) > 0 || ids_.count(symbol) > 0;
}

int PhoneInventory::id(std::string_view symbol) const {
  if (auto it = ids_.find(symbol); it != ids_.end()) return it->second;
  if (auto it = ids_.find(strip_stress(symbol)); it != ids_.end()) {
    return it->second;
  }
  throw Error("unknown phone symbol '" + std::string(symbol) + "'");
}

const std::string& PhoneInventory::symbol(int id) const {
  if (id < 0 || id >= size()) {
    throw Error("phone id " + std::to_string(id) + " out of range");
  }
  return symbols_[id];
}

Lexicon parse_lexicon(std::istream& is) {
  const PhoneInventory& inv = PhoneInventory::arpabet();
  Lexicon lex;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind(";;;", 0) == 0) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error("lexicon line " + std::to_string(lineno) +
                  ": expected 'word<TAB>phones'");
    }
    const std::string word = normalize_text(line.substr(0, tab));
    std::istringstream phones(line.substr(tab + 1));
    std::vector<int> ids;
    std::string ph;
    while (phones >> ph) {
      try {
        ids.push_back(inv.id(ph));
      } catch (const Error&) {
        throw Error("lexicon line " + std::to_string(lineno) +
                    ": unknown phone '" + ph + "'");
      }
    }
    if (word.empty() || ids.empty()) {
      throw Error("lexicon line " + std::to_string(lineno) +
                  ": empty word or pronunciation");
    }
    lex[word] = std::move(ids);
  }
  return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open lexicon " + path.string());
  return parse_lexicon(is);
}

OovError::OovError(std::vector<std::string> words)
    : Error("out-of-vocabulary word(s): " + join(words)),
      words_(std::move(words)) {}

PhoneSequence text_to_phones(std::string_view text, const Lexicon& lexicon) {
  PhoneSequence seq;
  std::vector<std::string> oov;
  bool first = true;
  for (const auto& word : normalize_words(text)) {
    auto it = lexicon.find(word);
    if (it == lexicon.end()) {
      oov.push_back(word);
      continue;
    }
    if (!first) seq.phone_ids.push_back(PhoneInventory::kWordBoundary);
    first = false;
    seq.phone_ids.insert(seq.phone_ids.end(), it->second.begin(),
                         it->second.end());
  }
  if (!oov.empty()) throw OovError(std::move(oov));
  return seq;
}

std::vector<int> parse_durations(std::istream& is) {
  std::vector<int> out;
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || v < 0) {
      throw Error("bad duration token '" + tok + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<int> read_durations(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open durations " + path.string());
  try {
    return parse_durations(is);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::vector<int> reconcile_durations(std::vector<int> durations,
                                     std::size_t num_phones, int mel_frames,
                                     int max_adjust) {
  if (durations.size() != num_phones) {
    throw Error("duration count " + std::to_string(durations.size()) +
                " != phone count " + std::to_string(num_phones));
  }
  if (durations.empty()) {
    if (mel_frames == 0) return durations;
    throw Error("no phones to carry " + std::to_string(mel_frames) +
                " frames");
  }
  const long total = std::accumulate(durations.begin(), durations.end(), 0L);
  const long diff = static_cast<long>(mel_frames) - total;
  if (diff == 0) return durations;
  if (std::abs(diff) > max_adjust || durations.back() + diff < 0) {
    throw Error("duration sum " + std::to_string(total) +
                " does not match mel frame count " +
                std::to_string(mel_frames));
  }
  durations.back() += static_cast<int>(diff);
  return durations;
}

}  // namespace accent
