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

#include "polyret/synth.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <unordered_set>

#include "polyret/errors.h"
#include "polyret/random.h"

namespace polyret {

namespace {

constexpr std::size_t kDocWordsPerTopic = 5;
constexpr std::size_t kQueryWordsPerTopic = 4;
constexpr std::size_t kTailWordsPerTopic = 2;
constexpr std::size_t kMinFillerWords = 10;

constexpr const char* kOnsets = "bdfgklmnprstvz";
constexpr const char* kVowels = "aeiou";

std::string make_word(std::size_t code) {
  const std::size_t n_on = std::char_traits<char>::length(kOnsets);
  const std::size_t n_syl = n_on * 5;
  std::string w;
  for (int i = 0; i < 3; ++i) {
    const std::size_t s = code % n_syl;
    code /= n_syl;
    w += kOnsets[s / 5];
    w += kVowels[s % 5];
  }
  return w;
}

std::vector<std::string> draw_words(std::size_t n, Rng& rng) {
  const std::size_t space = 70 * 70 * 70;
  std::unordered_set<std::size_t> used;
  std::vector<std::string> out;
  while (out.size() < n) {
    const std::size_t code = rng.index(space);
    if (used.insert(code).second) out.push_back(make_word(code));
  }
  return out;
}

struct Topic {
  std::size_t cluster = 0;
  std::vector<std::string> doc_words;
  std::vector<std::string> query_words;
  std::vector<std::string> tail_words;
};

struct Layout {
  std::vector<std::string> anchors;  // one per cluster
  std::vector<Topic> topics;
  std::vector<std::string> filler;
};

template <typename T>
std::vector<T> sample_distinct(const std::vector<T>& from, std::size_t k, Rng& rng) {
  std::vector<T> pool = from;
  rng.shuffle(pool);
  pool.resize(std::min(k, pool.size()));
  return pool;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

class Generator {
 public:
  explicit Generator(const SyntheticCorpusSpec& spec) : spec_(spec), rng_(spec.seed) {}

  SyntheticCorpus run() {
    build_layout();
    SyntheticCorpus c;
    std::vector<std::string> words = layout_.anchors;
    for (const auto& t : layout_.topics) {
      words.insert(words.end(), t.doc_words.begin(), t.doc_words.end());
      words.insert(words.end(), t.query_words.begin(), t.query_words.end());
      words.insert(words.end(), t.tail_words.begin(), t.tail_words.end());
    }
    words.insert(words.end(), layout_.filler.begin(), layout_.filler.end());
    std::sort(words.begin(), words.end());
    c.vocab = Vocabulary(words);

    make_documents(c);
    make_queries(c);
    make_click_log(c);
    make_labels(c);
    return c;
  }

 private:
  void build_layout() {
    const std::size_t n_clusters =
        (spec_.n_topics + spec_.topics_per_cluster - 1) / spec_.topics_per_cluster;
    auto words = draw_words(spec_.vocab_size, rng_);
    std::size_t next = 0;
    auto take = [&](std::size_t n) {
      std::vector<std::string> out(words.begin() + next, words.begin() + next + n);
      next += n;
      return out;
    };
    layout_.anchors = take(n_clusters);
    for (std::size_t t = 0; t < spec_.n_topics; ++t) {
      Topic topic;
      topic.cluster = t / spec_.topics_per_cluster;
      topic.doc_words = take(kDocWordsPerTopic);
      topic.query_words = take(kQueryWordsPerTopic);
      topic.tail_words = take(kTailWordsPerTopic);
      layout_.topics.push_back(std::move(topic));
    }
    layout_.filler = take(words.size() - next);
  }

  const std::string& filler() { return layout_.filler[rng_.index(layout_.filler.size())]; }

  std::string maybe_swap(const std::string& word, std::size_t topic) {
    if (!rng_.bernoulli(spec_.noise) || spec_.n_topics < 2) return word;
    std::size_t other = rng_.index(spec_.n_topics - 1);
    if (other >= topic) ++other;
    const auto& dw = layout_.topics[other].doc_words;
    return dw[rng_.index(dw.size())];
  }

  std::size_t length(std::size_t lo, std::size_t hi) { return lo + rng_.index(hi - lo + 1); }

  void make_documents(SyntheticCorpus& c) {
    const std::size_t n_docs = spec_.n_topics * spec_.docs_per_topic;
    std::vector<std::uint64_t> ids(n_docs);
    std::iota(ids.begin(), ids.end(), std::uint64_t{1});
    rng_.shuffle(ids);
    std::size_t k = 0;
    for (std::size_t t = 0; t < spec_.n_topics; ++t) {
      const Topic& topic = layout_.topics[t];
      for (std::size_t j = 0; j < spec_.docs_per_topic; ++j) {
        const std::size_t len = length(spec_.title_min_length, spec_.title_max_length);
        const std::size_t topical = std::min<std::size_t>(2 + rng_.index(3), len - 1);
        std::vector<std::string> w{layout_.anchors[topic.cluster]};
        std::size_t kept = 0;
        for (const auto& d : sample_distinct(topic.doc_words, topical, rng_)) {
          w.push_back(maybe_swap(d, t));
          kept += w.back() == d;
        }
        doc_topical_.push_back(kept);
        while (w.size() < len) w.push_back(filler());
        rng_.shuffle(w);
        c.docs.push_back({ids[k++], join(w)});
        c.doc_topics.push_back(t);
        docs_by_topic_.resize(spec_.n_topics);
        docs_by_topic_[t].push_back(c.docs.size() - 1);
      }
    }
  }

  void make_queries(SyntheticCorpus& c) {
    std::uint64_t next_id = 1;
    for (std::size_t t = 0; t < spec_.n_topics; ++t) {
      const Topic& topic = layout_.topics[t];
      const std::size_t nq = spec_.queries_per_topic;
      const auto n_tail = static_cast<std::size_t>(std::lround(nq * spec_.tail_fraction));
      const auto n_val = static_cast<std::size_t>(std::lround(nq * spec_.validation_fraction));
      const auto n_test = static_cast<std::size_t>(std::lround(nq * spec_.test_fraction));
      std::vector<std::size_t> order(nq);
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng_.shuffle(order);
      std::vector<bool> tail(nq, false);
      for (std::size_t i = 0; i < n_tail && i < nq; ++i) tail[order[i]] = true;
      rng_.shuffle(order);
      std::vector<Split> split(nq, Split::kTrain);
      for (std::size_t i = 0; i < nq; ++i) {
        if (i < n_val) split[order[i]] = Split::kValidation;
        else if (i < n_val + n_test) split[order[i]] = Split::kTest;
      }
      for (std::size_t i = 0; i < nq; ++i) {
        const std::size_t len = length(spec_.query_min_length, spec_.query_max_length);
        const auto& own = tail[i] ? topic.tail_words : topic.query_words;
        const std::size_t n_own = std::min<std::size_t>(1 + rng_.index(2), len - 1);
        std::vector<std::string> w{layout_.anchors[topic.cluster]};
        for (const auto& q : sample_distinct(own, n_own, rng_)) w.push_back(q);
        if (w.size() < len && rng_.bernoulli(0.3))
          w.push_back(maybe_swap(topic.doc_words[rng_.index(topic.doc_words.size())], t));
        while (w.size() < len) w.push_back(filler());
        rng_.shuffle(w);
        c.queries.push_back({next_id++, join(w), t, tail[i], split[i]});
      }
    }
  }

  /// Grade before label noise: for the query's own topic 4 when the title
  /// carries at least three of the topic's words and 3 otherwise; 1 inside
  /// the query's cluster; 0 elsewhere.
  int base_grade(const SyntheticQuery& q, const SyntheticCorpus& c, std::size_t doc) {
    const std::size_t dt = c.doc_topics[doc];
    if (dt == q.topic) return doc_topical_[doc] >= 3 ? 4 : 3;
    if (layout_.topics[dt].cluster == layout_.topics[q.topic].cluster) return 1;
    return 0;
  }

  int noisy_grade(int g) {
    if (!rng_.bernoulli(spec_.noise)) return g;
    return std::clamp(g + (rng_.bernoulli(0.5) ? 1 : -1), 0, 4);
  }

  /// own, same-cluster and unrelated documents for one query.
  std::vector<std::size_t> candidates(const SyntheticQuery& q, std::size_t n_own,
                                      std::size_t n_cluster, std::size_t n_random) {
    std::vector<std::size_t> out = sample_distinct(docs_by_topic_[q.topic], n_own, rng_);
    const std::size_t cluster = layout_.topics[q.topic].cluster;
    std::vector<std::size_t> near, far;
    for (std::size_t t = 0; t < spec_.n_topics; ++t) {
      if (t == q.topic) continue;
      auto& dst = layout_.topics[t].cluster == cluster ? near : far;
      dst.insert(dst.end(), docs_by_topic_[t].begin(), docs_by_topic_[t].end());
    }
    for (auto d : sample_distinct(near, n_cluster, rng_)) out.push_back(d);
    for (auto d : sample_distinct(far, n_random, rng_)) out.push_back(d);
    return out;
  }

  void make_click_log(SyntheticCorpus& c) {
    static constexpr double kAttract[5] = {0.03, 0.08, 0.2, 0.55, 0.85};
    const std::size_t size = spec_.impression_size;
    const std::size_t n_own = (size * 4 + 9) / 10;
    const std::size_t n_cluster = (size - n_own + 1) / 2;
    const std::size_t n_random = size - n_own - n_cluster;
    for (const auto& q : c.queries) {
      if (q.split != Split::kTrain) continue;
      const std::size_t n_imp = q.tail ? 1 : spec_.impressions_per_query;
      for (std::size_t imp = 0; imp < n_imp; ++imp) {
        std::vector<std::pair<double, std::size_t>> ranked;
        for (auto d : candidates(q, n_own, n_cluster, n_random))
          ranked.emplace_back(base_grade(q, c, d) + rng_.normal(0.0, 1.5), d);
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t r = 0; r < ranked.size(); ++r) {
          const std::size_t d = ranked[r].second;
          const int g = base_grade(q, c, d);
          const bool clicked = rng_.bernoulli(std::pow(0.85, static_cast<double>(r)) * kAttract[g]);
          double dwell = 0.0;
          if (clicked) {
            dwell = std::exp(rng_.normal(std::log(4.0 + 12.0 * g), 0.5));
            dwell = std::round(dwell * 10.0) / 10.0;
          }
          c.click_log.push_back({q.query_id, q.text, c.docs[d].doc_id, c.docs[d].title, clicked, dwell});
        }
      }
    }
  }

  void label(const SyntheticQuery& q, const SyntheticCorpus& c, const std::vector<std::size_t>& docs,
             std::vector<GradedLabelRecord>& out) {
    for (auto d : docs) {
      out.push_back({q.query_id, q.text, c.docs[d].doc_id, c.docs[d].title,
                     noisy_grade(base_grade(q, c, d))});
    }
  }

  void make_labels(SyntheticCorpus& c) {
    for (const auto& q : c.queries) {
      switch (q.split) {
        case Split::kTrain:
          if (rng_.bernoulli(spec_.graded_train_fraction))
            label(q, c, candidates(q, 3, 3, 2), c.graded_train);
          break;
        case Split::kValidation:
          label(q, c, candidates(q, spec_.docs_per_topic, spec_.eval_cluster_docs, spec_.eval_random_docs), c.validation);
          break;
        case Split::kTest: {
          const std::size_t begin = c.test.size();
          label(q, c, candidates(q, spec_.docs_per_topic, spec_.eval_cluster_docs, spec_.eval_random_docs), c.test);
          if (q.tail) c.tail.insert(c.tail.end(), c.test.begin() + begin, c.test.end());
          break;
        }
      }
    }
  }

  const SyntheticCorpusSpec& spec_;
  Rng rng_;
  Layout layout_;
  std::vector<std::vector<std::size_t>> docs_by_topic_;
  std::vector<std::size_t> doc_topical_;  // own-topic words per title
};

}  // namespace

std::size_t SyntheticCorpusSpec::required_words() const {
  const std::size_t n_clusters =
      topics_per_cluster == 0 ? 0 : (n_topics + topics_per_cluster - 1) / topics_per_cluster;
  return n_clusters + n_topics * (kDocWordsPerTopic + kQueryWordsPerTopic + kTailWordsPerTopic) +
         kMinFillerWords;
}

void SyntheticCorpusSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError("synthetic spec field '" + field + "' " + why);
  };
  if (n_topics == 0) fail("n_topics", "must be > 0");
  if (topics_per_cluster == 0) fail("topics_per_cluster", "must be > 0");
  if (docs_per_topic == 0) fail("docs_per_topic", "must be > 0");
  if (queries_per_topic == 0) fail("queries_per_topic", "must be > 0");
  if (vocab_size < n_topics) fail("vocab_size", "is smaller than n_topics");
  if (vocab_size < required_words())
    fail("vocab_size", "must be at least " + std::to_string(required_words()));
  if (vocab_size > 70 * 70 * 70 / 2) fail("vocab_size", "is too large");
  if (query_min_length < 2 || query_min_length > query_max_length)
    fail("query_min_length", "must be >= 2 and <= query_max_length");
  if (title_min_length < 3 || title_min_length > title_max_length)
    fail("title_min_length", "must be >= 3 and <= title_max_length");
  auto unit = [&](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) fail(name, "must be in [0, 1]");
  };
  unit(tail_fraction, "tail_fraction");
  unit(noise, "noise");
  unit(validation_fraction, "validation_fraction");
  unit(test_fraction, "test_fraction");
  unit(graded_train_fraction, "graded_train_fraction");
  if (validation_fraction + test_fraction >= 1.0)
    fail("test_fraction", "plus validation_fraction must be < 1");
  if (impressions_per_query == 0) fail("impressions_per_query", "must be > 0");
  if (impression_size < 2) fail("impression_size", "must be >= 2");
}

SyntheticCorpus generate_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  return Generator(spec).run();
}

void write_corpus(const SyntheticCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  corpus.vocab.save((root / "vocab.txt").string());
  write_documents((root / "docs.jsonl").string(), corpus.docs);
  write_click_log((root / "click_log.jsonl").string(), corpus.click_log);
  write_graded((root / "graded_train.jsonl").string(), corpus.graded_train);
  write_graded((root / "validation.jsonl").string(), corpus.validation);
  write_graded((root / "test.jsonl").string(), corpus.test);
  write_graded((root / "tail.jsonl").string(), corpus.tail);
}

PipelineData pipeline_data(const std::vector<Document>& docs,
                           const std::vector<ClickLogRecord>& click_log,
                           const std::vector<GradedLabelRecord>& graded) {
  PipelineData data;
  for (std::size_t i = 0; i + 1 < docs.size(); ++i)
    data.pretrain_pairs.push_back({docs[i].title, docs[i + 1].title});
  for (const auto& r : click_log)
    if (r.clicked) data.post_pretrain_pairs.push_back({r.query_text, r.doc_title});
  for (const auto& d : docs) data.negative_pool.push_back(d.title);
  data.click_log = click_log;
  data.graded = graded;
  return data;
}

}  // namespace polyret
