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

#include <string>
#include <string_view>
#include <vector>

namespace accent {

// Logged alongside evaluation reports so scores stay comparable.
inline constexpr std::string_view kTextNormalizerVersion = "ascii-fold-v1";

// Lowercases ASCII, drops punctuation other than in-word apostrophes, turns
// '-', '_' and '/' into spaces and collapses whitespace runs. Bytes >= 0x80
// pass through untouched.
std::string normalize_text(std::string_view text);

// normalize_text() followed by a split on single spaces.
std::vector<std::string> normalize_words(std::string_view text);

}  // namespace accent
