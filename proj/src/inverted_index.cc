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

#include "polyret/inverted_index.h"

#include <algorithm>
#include <cmath>

#include "polyret/binio.h"
#include "polyret/errors.h"
#include "polyret/text.h"

namespace polyret {

namespace {

constexpr std::string_view kInvertedMagic = "PRINVIDX";
constexpr std::uint32_t kInvertedVersion = 1;

}  // namespace

InvertedIndex InvertedIndex::build(std::span<const TermDocument> docs) {
  if (docs.empty()) throw ContractError("build_inverted: empty corpus");
  InvertedIndex index;
  std::uint64_t total_length = 0;
  for (const auto& doc : docs) {
    const auto length = static_cast<std::uint32_t>(doc.terms.size());
    if (!index.doc_lengths_.emplace(doc.doc_id, length).second) {
      throw ContractError("build_inverted: duplicate doc_id " + std::to_string(doc.doc_id));
    }
    total_length += length;
    std::map<std::string, std::uint32_t> tf;
    for (const auto& t : doc.terms) ++tf[t];
    for (const auto& [term, count] : tf) index.postings_[term].push_back({doc.doc_id, count});
  }
  for (auto& [term, list] : index.postings_) {
    std::sort(list.begin(), list.end(),
              [](const Posting& a, const Posting& b) { return a.doc_id < b.doc_id; });
  }
  index.avg_length_ = static_cast<double>(total_length) / static_cast<double>(docs.size());
  return index;
}

InvertedIndex InvertedIndex::build_from_titles(
    std::span<const std::pair<std::uint64_t, std::string>> titles) {
  std::vector<TermDocument> docs;
  docs.reserve(titles.size());
  for (const auto& [id, title] : titles) docs.push_back({id, index_terms(title)});
  return build(docs);
}

std::vector<std::string> InvertedIndex::distinct(std::span<const std::string> terms) {
  std::vector<std::string> out;
  for (const auto& t : terms) {
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  return out;
}

double InvertedIndex::idf(const std::string& term) const {
  const double n = static_cast<double>(doc_count());
  const double df = static_cast<double>(document_frequency(term));
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

std::size_t InvertedIndex::document_frequency(const std::string& term) const {
  const auto* list = postings(term);
  return list ? list->size() : 0;
}

const std::vector<Posting>* InvertedIndex::postings(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? nullptr : &it->second;
}

double InvertedIndex::term_weight(double idf, std::uint32_t tf, std::uint32_t doc_length) const {
  const double f = static_cast<double>(tf);
  const double norm = 1.0 - bm25_.b + bm25_.b * static_cast<double>(doc_length) / avg_length_;
  return idf * f * (bm25_.k1 + 1.0) / (f + bm25_.k1 * norm);
}

SearchResult InvertedIndex::search(std::string_view query, std::size_t k) const {
  const auto terms = index_terms(query);
  return search_terms(terms, k);
}

SearchResult InvertedIndex::search_terms(std::span<const std::string> terms, std::size_t k) const {
  if (k == 0) throw ContractError("bm25_search: k must be >= 1");
  SearchResult result;
  if (terms.empty()) {
    result.flagged = true;
    return result;
  }
  // Accumulate per document in query-term order so that every path adds the
  // same terms in the same order.
  std::map<std::uint64_t, double> scores;
  for (const auto& term : distinct(terms)) {
    const auto* list = postings(term);
    if (!list) continue;
    const double w = idf(term);
    for (const Posting& p : *list) {
      scores[p.doc_id] += term_weight(w, p.tf, doc_lengths_.at(p.doc_id));
    }
  }
  std::vector<ScoredDoc> hits;
  hits.reserve(scores.size());
  for (const auto& [id, s] : scores) hits.push_back({id, s});
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    ranks_before);
  hits.resize(keep);
  result.hits = std::move(hits);
  return result;
}

double InvertedIndex::score_document(std::span<const std::string> terms,
                                     std::uint64_t doc_id) const {
  auto len = doc_lengths_.find(doc_id);
  if (len == doc_lengths_.end()) return 0.0;
  double s = 0.0;
  for (const auto& term : distinct(terms)) {
    const auto* list = postings(term);
    if (!list) continue;
    auto it = std::lower_bound(list->begin(), list->end(), doc_id,
                               [](const Posting& p, std::uint64_t id) { return p.doc_id < id; });
    if (it != list->end() && it->doc_id == doc_id) s += term_weight(idf(term), it->tf, len->second);
  }
  return s;
}

void InvertedIndex::save(const std::string& path) const {
  BinaryWriter w(path);
  w.magic(kInvertedMagic);
  w.put<std::uint32_t>(kInvertedVersion);
  w.put<double>(bm25_.k1);
  w.put<double>(bm25_.b);
  w.put<double>(avg_length_);
  w.put<std::uint64_t>(doc_lengths_.size());
  for (const auto& [id, len] : doc_lengths_) {
    w.put<std::uint64_t>(id);
    w.put<std::uint32_t>(len);
  }
  w.put<std::uint64_t>(postings_.size());
  for (const auto& [term, list] : postings_) {
    w.put_string(term);
    w.put<std::uint64_t>(list.size());
    for (const Posting& p : list) {
      w.put<std::uint64_t>(p.doc_id);
      w.put<std::uint32_t>(p.tf);
    }
  }
  w.close();
}

InvertedIndex InvertedIndex::load(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kInvertedMagic);
  if (const auto v = r.get<std::uint32_t>(); v != kInvertedVersion) {
    throw InputError(path + ": unsupported inverted index version " + std::to_string(v));
  }
  InvertedIndex index;
  index.bm25_.k1 = r.get<double>();
  index.bm25_.b = r.get<double>();
  index.avg_length_ = r.get<double>();
  const auto n_docs = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_docs; ++i) {
    const auto id = r.get<std::uint64_t>();
    index.doc_lengths_.emplace_hint(index.doc_lengths_.end(), id, r.get<std::uint32_t>());
  }
  const auto n_terms = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_terms; ++i) {
    std::string term = r.get_string();
    const auto count = r.get<std::uint64_t>();
    if (count > n_docs) throw InputError(path + ": corrupt posting list for '" + term + "'");
    std::vector<Posting> list(count);
    for (auto& p : list) {
      p.doc_id = r.get<std::uint64_t>();
      p.tf = r.get<std::uint32_t>();
    }
    index.postings_.emplace_hint(index.postings_.end(), std::move(term), std::move(list));
  }
  return index;
}

}  // namespace polyret
