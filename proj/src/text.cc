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

#include "polyret/text.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>

#include "polyret/errors.h"

namespace polyret {

namespace {

constexpr std::array<std::string_view, 24> kStopwords = {
    "a",  "an", "and", "are", "as", "at", "be",  "by",   "for", "from", "in",   "is",
    "it", "of", "on",  "or",  "that", "the", "this", "to", "was", "with", "what", "how"};

const std::string kSpecialNames[kFirstWordId] = {"[CLS]", "[PAD]", "[MASK]", "[SEP]", "[UNK]"};

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool is_stopword(std::string_view word) {
  return std::find(kStopwords.begin(), kStopwords.end(), word) != kStopwords.end();
}

std::vector<std::string> index_terms(std::string_view text) {
  auto words = split_words(text);
  std::erase_if(words, [](const std::string& w) { return is_stopword(w); });
  return words;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    auto [it, inserted] = index_.emplace(words_[i], static_cast<TokenId>(kFirstWordId + i));
    if (!inserted) throw InputError("vocabulary: duplicate word '" + words_[i] + "'");
  }
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id >= 0 && id < kFirstWordId) return kSpecialNames[id];
  const auto idx = static_cast<std::size_t>(id - kFirstWordId);
  if (idx >= words_.size()) throw InputError("vocabulary: id " + std::to_string(id) + " out of range");
  return words_[idx];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("vocabulary: cannot write " + path);
  for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("vocabulary: cannot read " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) words.push_back(line);
  }
  return Vocabulary(std::move(words));
}

}  // namespace polyret
