// Copyright 2026 The polyret Authors
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

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace polyret {

using TokenId = std::int32_t;

inline constexpr TokenId kClsId = 0;
inline constexpr TokenId kPadId = 1;
inline constexpr TokenId kMaskId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kUnkId = 4;
inline constexpr TokenId kFirstWordId = 5;

/// Lowercases and splits on anything that is not an ASCII letter or digit.
std::vector<std::string> split_words(std::string_view text);

bool is_stopword(std::string_view word);

/// split_words() minus stop words; the term stream used by text matching.
std::vector<std::string> index_terms(std::string_view text);

/// Word <-> id table. Ids [0, kFirstWordId) are reserved for special tokens.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const { return kFirstWordId + words_.size(); }
  TokenId id(std::string_view word) const;
  const std::string& word(TokenId id) const;
  const std::vector<std::string>& words() const { return words_; }

  /// One word per line, in id order starting at kFirstWordId.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace polyret
