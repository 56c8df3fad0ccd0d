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

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "accent/error.h"

namespace accent {

// Fixed ARPAbet inventory (stress digits stripped) behind three reserved IDs.
class PhoneInventory {
 public:
  static constexpr int kPad = 0;
  static constexpr int kWordBoundary = 1;
  static constexpr int kSilence = 2;

  static const PhoneInventory& arpabet();

  int size() const { return static_cast<int>(symbols_.size()); }
  // Accepts "AH0"-style stressed symbols. Throws for unknown symbols.
  int id(std::string_view symbol) const;
  bool contains(std::string_view symbol) const;
  const std::string& symbol(int id) const;

 private:
  PhoneInventory();
  std::vector<std::string> symbols_;
  std::map<std::string, int, std::less<>> ids_;
};

// Normalized word -> phone IDs.
using Lexicon = std::map<std::string, std::vector<int>, std::less<>>;

// "word<TAB>PH PH ..." per line. Words go through normalize_text(); blank
// lines and lines starting with ';;;' are skipped. Later duplicates win.
Lexicon parse_lexicon(std::istream& is);
Lexicon load_lexicon(const std::filesystem::path& path);

struct PhoneSequence {
  std::vector<int> phone_ids;
  std::vector<int> durations;  // frames per phone; empty until aligned
  int speaker_id = 0;

  std::size_t size() const { return phone_ids.size(); }
};

class OovError : public Error {
 public:
  explicit OovError(std::vector<std::string> words);
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
};

// Concatenates lexicon pronunciations with a word-boundary ID between
// consecutive words. Durations stay empty.
// Throws OovError listing every out-of-vocabulary word.
PhoneSequence text_to_phones(std::string_view text, const Lexicon& lexicon);

// Whitespace-separated non-negative integers, one per phone.
std::vector<int> read_durations(const std::filesystem::path& path);
std::vector<int> parse_durations(std::istream& is);

// Checks an aligner's durations against the phone and mel frame counts.
// A final-phone discrepancy of at most max_adjust frames is absorbed by
// clipping or padding the last phone; anything else throws.
std::vector<int> reconcile_durations(std::vector<int> durations,
                                     std::size_t num_phones, int mel_frames,
                                     int max_adjust = 2);

}  // namespace accent
