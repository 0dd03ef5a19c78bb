#pragma once

// Bag-of-words corpora: UCI docword/vocab parsing, vocabulary pruning and
// versioned JSON persistence.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "catmix/errors.hpp"

namespace catmix {

using WordIndex = std::uint32_t;

struct WordCount {
  WordIndex word;
  std::uint64_t count;

  friend bool operator==(const WordCount&, const WordCount&) = default;
};

/// One document: sparse counts sorted by word index, every count >= 1.
struct Document {
  std::string id;
  std::vector<WordCount> counts;
  std::uint64_t length = 0;

  friend bool operator==(const Document&, const Document&) = default;
};

class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    std::unordered_set<std::string_view> seen;
    for (const auto& w : words_) {
      if (!seen.insert(w).second) throw ValueError("duplicate vocabulary token '" + w + "'");
    }
  }

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& operator[](std::size_t i) const { return words_.at(i); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> words_;
};

using YearTable = std::map<std::string, int>;

/// Immutable collection of L documents over a B-word vocabulary.
class Corpus {
 public:
  Corpus() = default;

  Corpus(std::vector<Document> docs, Vocabulary vocab, YearTable years = {},
         std::vector<std::string> dropped_ids = {})
      : docs_(std::move(docs)),
        vocab_(std::move(vocab)),
        years_(std::move(years)),
        dropped_ids_(std::move(dropped_ids)) {
    total_ = 0;
    for (auto& d : docs_) {
      std::sort(d.counts.begin(), d.counts.end(),
                [](const WordCount& a, const WordCount& b) { return a.word < b.word; });
      std::uint64_t len = 0;
      for (std::size_t i = 0; i < d.counts.size(); ++i) {
        const auto& wc = d.counts[i];
        if (wc.count == 0) throw ValueError("document '" + d.id + "' stores a zero count");
        if (wc.word >= vocab_.size()) {
          throw IndexError("document '" + d.id + "' references word " + std::to_string(wc.word) +
                           " outside vocabulary of size " + std::to_string(vocab_.size()));
        }
        if (i > 0 && d.counts[i - 1].word == wc.word) {
          throw ValueError("document '" + d.id + "' repeats word " + std::to_string(wc.word));
        }
        len += wc.count;
      }
      if (len == 0) throw ValueError("document '" + d.id + "' is empty");
      d.length = len;
      total_ += len;
    }
  }

  std::size_t num_docs() const noexcept { return docs_.size(); }
  std::size_t vocab_size() const noexcept { return vocab_.size(); }
  std::uint64_t total_tokens() const noexcept { return total_; }

  const std::vector<Document>& docs() const noexcept { return docs_; }
  const Document& doc(std::size_t l) const { return docs_.at(l); }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const YearTable& years() const noexcept { return years_; }
  const std::vector<std::string>& dropped_ids() const noexcept { return dropped_ids_; }

  Corpus with_years(YearTable years) const {
    Corpus c = *this;
    c.years_ = std::move(years);
    return c;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;

 private:
  std::vector<Document> docs_;
  Vocabulary vocab_;
  YearTable years_;
  std::vector<std::string> dropped_ids_;
  std::uint64_t total_ = 0;
};

namespace detail {

inline bool next_content_line(std::istream& in, std::string& line, std::size_t& lineno) {
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) return true;
  }
  return false;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::optional<std::int64_t> to_int(std::string_view s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a UCI bag-of-words pair: docword (D, W, NNZ header then `doc word
/// count` triples, 1-based) and vocab (one token per line). Documents with
/// no triples are omitted.
inline Corpus parse_bag_of_words(std::istream& docword, std::istream& vocab_in) {
  std::string line;
  std::size_t lineno = 0;
  std::int64_t header[3];
  const char* names[3] = {"D", "W", "NNZ"};
  for (int h = 0; h < 3; ++h) {
    if (!detail::next_content_line(docword, line, lineno)) {
      throw ParseError(lineno + 1, std::string("missing header field ") + names[h]);
    }
    auto fields = detail::split_ws(line);
    auto v = fields.size() == 1 ? detail::to_int(fields[0]) : std::nullopt;
    if (!v || *v < 0) throw ParseError(lineno, std::string("malformed header field ") + names[h]);
    header[h] = *v;
  }
  const auto num_docs = header[0];
  const auto num_words = header[1];
  const auto nnz = header[2];

  std::map<std::int64_t, std::map<WordIndex, std::uint64_t>> by_doc;
  for (std::int64_t t = 0; t < nnz; ++t) {
    if (!detail::next_content_line(docword, line, lineno)) {
      throw ParseError(lineno + 1, "expected " + std::to_string(nnz) + " triples, found " +
                                       std::to_string(t));
    }
    auto f = detail::split_ws(line);
    if (f.size() != 3) throw ParseError(lineno, "expected 'docID wordID count'");
    auto d = detail::to_int(f[0]);
    auto w = detail::to_int(f[1]);
    auto c = detail::to_int(f[2]);
    if (!d || !w || !c) throw ParseError(lineno, "non-integer field in triple");
    if (*d < 1 || *d > num_docs) {
      throw IndexError("line " + std::to_string(lineno) + ": docID " + std::to_string(*d) +
                       " outside [1, " + std::to_string(num_docs) + "]");
    }
    if (*w < 1 || *w > num_words) {
      throw IndexError("line " + std::to_string(lineno) + ": wordID " + std::to_string(*w) +
                       " outside [1, " + std::to_string(num_words) + "]");
    }
    if (*c <= 0) {
      throw ValueError("line " + std::to_string(lineno) + ": count must be positive, got " +
                       std::to_string(*c));
    }
    by_doc[*d][static_cast<WordIndex>(*w - 1)] += static_cast<std::uint64_t>(*c);
  }

  std::vector<std::string> tokens;
  std::size_t vline = 0;
  while (std::getline(vocab_in, line)) {
    ++vline;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  if (static_cast<std::int64_t>(tokens.size()) != num_words) {
    throw ValueError("vocabulary has " + std::to_string(tokens.size()) +
                     " tokens but docword header declares W=" + std::to_string(num_words));
  }

  std::vector<Document> docs;
  docs.reserve(by_doc.size());
  for (auto& [id, counts] : by_doc) {
    Document d;
    d.id = std::to_string(id);
    for (auto [w, c] : counts) d.counts.push_back({w, c});
    docs.push_back(std::move(d));
  }
  return Corpus(std::move(docs), Vocabulary(std::move(tokens)));
}

/// Writes the corpus back as docword/vocab text. Document ids must be
/// positive integers; D is the largest id.
inline void write_bag_of_words(const Corpus& corpus, std::ostream& docword, std::ostream& vocab) {
  std::int64_t max_id = 0;
  std::size_t nnz = 0;
  for (const auto& d : corpus.docs()) {
    auto id = detail::to_int(d.id);
    if (!id || *id < 1) throw ValueError("document id '" + d.id + "' is not a positive integer");
    max_id = std::max(max_id, *id);
    nnz += d.counts.size();
  }
  docword << max_id << '\n' << corpus.vocab_size() << '\n' << nnz << '\n';
  for (const auto& d : corpus.docs()) {
    for (const auto& wc : d.counts) docword << d.id << ' ' << wc.word + 1 << ' ' << wc.count << '\n';
  }
  for (const auto& w : corpus.vocab().words()) vocab << w << '\n';
}

/// Reads the optional `doc_id,year` sidecar. A header line is allowed.
inline YearTable parse_year_table(std::istream& in) {
  YearTable years;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(lineno, "expected 'doc_id,year'");
    std::string id = line.substr(0, comma);
    auto year = detail::to_int(std::string_view(line).substr(comma + 1));
    if (!year) {
      if (lineno == 1) continue;  // header
      throw ParseError(lineno, "year is not an integer");
    }
    years[id] = static_cast<int>(*year);
  }
  return years;
}

/// Removes words present in more than `max_doc_fraction` of the documents,
/// keeps the `top_b` most frequent of the rest (lower original index wins
/// ties) and drops documents left empty. Repeats until nothing changes, since
/// dropping documents can push a surviving word over the fraction.
inline Corpus prune_vocabulary(const Corpus& corpus, double max_doc_fraction, std::size_t top_b) {
  if (!(max_doc_fraction > 0.0 && max_doc_fraction <= 1.0)) {
    throw DomainError("max_doc_fraction must lie in (0, 1]");
  }
  if (top_b == 0) throw DomainError("top_b must be at least 1");

  Corpus current = corpus;
  for (;;) {
    const std::size_t B = current.vocab_size();
    const double L = static_cast<double>(current.num_docs());
    std::vector<std::uint64_t> doc_freq(B, 0), total(B, 0);
    for (const auto& d : current.docs()) {
      for (const auto& wc : d.counts) {
        ++doc_freq[wc.word];
        total[wc.word] += wc.count;
      }
    }
    std::vector<WordIndex> candidates;
    for (WordIndex b = 0; b < B; ++b) {
      if (static_cast<double>(doc_freq[b]) <= max_doc_fraction * L) candidates.push_back(b);
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](WordIndex a, WordIndex b) { return total[a] > total[b]; });
    if (candidates.size() > top_b) candidates.resize(top_b);
    std::sort(candidates.begin(), candidates.end());
    if (candidates.empty()) throw EmptyVocabularyError("pruning removed every word");

    std::vector<std::int64_t> remap(B, -1);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      remap[candidates[i]] = static_cast<std::int64_t>(i);
      words.push_back(current.vocab()[candidates[i]]);
    }

    std::vector<Document> docs;
    std::vector<std::string> dropped = current.dropped_ids();
    for (const auto& d : current.docs()) {
      Document nd;
      nd.id = d.id;
      for (const auto& wc : d.counts) {
        if (remap[wc.word] >= 0) nd.counts.push_back({static_cast<WordIndex>(remap[wc.word]), wc.count});
      }
      if (nd.counts.empty()) {
        dropped.push_back(d.id);
      } else {
        docs.push_back(std::move(nd));
      }
    }
    const bool unchanged = candidates.size() == B && docs.size() == current.num_docs();
    Corpus next(std::move(docs), Vocabulary(std::move(words)), current.years(), std::move(dropped));
    if (unchanged) return next;
    current = std::move(next);
  }
}

inline constexpr int kCorpusFormatVersion = 1;

inline nlohmann::json corpus_to_json(const Corpus& corpus) {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& d : corpus.docs()) {
    nlohmann::json words = nlohmann::json::array(), counts = nlohmann::json::array();
    for (const auto& wc : d.counts) {
      words.push_back(wc.word);
      counts.push_back(wc.count);
    }
    docs.push_back({{"id", d.id}, {"words", words}, {"counts", counts}});
  }
  nlohmann::json years = nlohmann::json::object();
  for (const auto& [id, y] : corpus.years()) years[id] = y;
  return {{"format", "catmix-corpus"},
          {"format_version", kCorpusFormatVersion},
          {"vocab", corpus.vocab().words()},
          {"total_tokens", corpus.total_tokens()},
          {"docs", docs},
          {"years", years},
          {"dropped_ids", corpus.dropped_ids()}};
}

inline Corpus corpus_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "catmix-corpus") throw FormatError("not a corpus document");
    const int version = j.at("format_version").get<int>();
    if (version != kCorpusFormatVersion) {
      throw FormatError("unsupported corpus format version " + std::to_string(version));
    }
    std::vector<Document> docs;
    for (const auto& jd : j.at("docs")) {
      Document d;
      d.id = jd.at("id").get<std::string>();
      const auto& words = jd.at("words");
      const auto& counts = jd.at("counts");
      if (words.size() != counts.size()) throw FormatError("document '" + d.id + "' is ragged");
      for (std::size_t i = 0; i < words.size(); ++i) {
        d.counts.push_back({words[i].get<WordIndex>(), counts[i].get<std::uint64_t>()});
      }
      docs.push_back(std::move(d));
    }
    YearTable years;
    for (const auto& [id, y] : j.at("years").items()) years[id] = y.get<int>();
    Corpus c(std::move(docs), Vocabulary(j.at("vocab").get<std::vector<std::string>>()),
             std::move(years), j.at("dropped_ids").get<std::vector<std::string>>());
    if (c.total_tokens() != j.at("total_tokens").get<std::uint64_t>()) {
      throw FormatError("stored token total does not match document counts");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corpus payload: ") + e.what());
  }
}

inline void save_corpus(const Corpus& corpus, std::ostream& out) { out << corpus_to_json(corpus).dump() << '\n'; }

inline Corpus load_corpus(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corpus payload: ") + e.what());
  }
  return corpus_from_json(j);
}

}  // namespace catmix
