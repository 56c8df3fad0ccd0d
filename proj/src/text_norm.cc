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

#include "accent/text_norm.h"

#include <cctype>

namespace accent {

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;
}

}  // namespace

std::string normalize_text(std::string_view text) {
  std::string spaced;
  spaced.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c >= 0x80 || std::isalnum(c)) {
      spaced.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::isspace(c) || c == '-' || c == '_' || c == '/') {
      spaced.push_back(' ');
    } else if (c == '\'') {
      const bool inner = i > 0 && i + 1 < text.size() &&
                         is_word_byte(static_cast<unsigned char>(text[i - 1])) &&
                         is_word_byte(static_cast<unsigned char>(text[i + 1]));
      if (inner) spaced.push_back('\'');
    }
    // other punctuation is dropped
  }
  std::string out;
  out.reserve(spaced.size());
  for (char c : spaced) {
    if (c == ' ') {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(c);
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  const std::string norm = normalize_text(text);
  std::size_t start = 0;
  while (start < norm.size()) {
    std::size_t end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    words.emplace_back(norm.substr(start, end - start));
    start = end + 1;
  }
  return words;
}

}  // namespace accent
