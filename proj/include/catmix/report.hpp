#pragma once

// Topic back-mapping tables: top words per cluster, yearly mean posterior
// per cluster and MAP assignments.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "catmix/corpus.hpp"
#include "catmix/em.hpp"
#include "catmix/errors.hpp"
#include "catmix/mixture.hpp"

namespace catmix {

struct TopWord {
  std::string word;
  double probability = 0.0;
};

struct ClusterSummary {
  std::size_t cluster = 0;
  double weight = 0.0;
  std::vector<TopWord> top_words;  // descending probability
};

struct TopicReport {
  std::vector<ClusterSummary> clusters;
  std::map<int, std::vector<double>> evolution;  // year -> mean posterior per cluster
  std::map<int, std::size_t> docs_per_year;
  std::size_t docs_without_year = 0;
  Assignment assignment;
  std::vector<std::string> doc_ids;
};

/// Builds the report. Yearly weights are unweighted means of per-document
/// posteriors; documents without a year are left out of the evolution.
inline TopicReport build_topic_report(const Corpus& corpus, const MixtureModel& model, std::size_t top_m,
                                      const YearTable& years) {
  detail::check_shape(corpus, model);
  const std::size_t K = model.num_components();
  const std::size_t B = model.vocab_size();
  TopicReport rep;
  for (std::size_t k = 0; k < K; ++k) {
    auto row = model.log_density(k);
    std::vector<std::size_t> order(B);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    ClusterSummary cs{k, model.weight(k), {}};
    for (std::size_t i = 0; i < std::min(top_m, B); ++i) {
      cs.top_words.push_back({corpus.vocab()[order[i]], std::exp(row[order[i]])});
    }
    rep.clusters.push_back(std::move(cs));
  }

  auto est = e_step(corpus, model);
  std::map<int, std::vector<double>> sums;
  for (std::size_t l = 0; l < corpus.num_docs(); ++l) {
    const auto& doc = corpus.doc(l);
    auto r = est.resp.row(l);
    rep.assignment.push_back(static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()));
    rep.doc_ids.push_back(doc.id);
    auto it = years.find(doc.id);
    if (it == years.end()) {
      ++rep.docs_without_year;
      continue;
    }
    auto& acc = sums[it->second];
    acc.resize(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) acc[k] += r[k];
    ++rep.docs_per_year[it->second];
  }
  for (auto& [year, acc] : sums) {
    const double count = static_cast<double>(rep.docs_per_year[year]);
    for (auto& v : acc) v /= count;
    rep.evolution[year] = std::move(acc);
  }
  return rep;
}

inline void write_top_words_csv(const TopicReport& rep, std::ostream& out) {
  std::ostringstream s;
  s.precision(17);
  s << "cluster,weight,rank,word,probability\n";
  for (const auto& c : rep.clusters) {
    for (std::size_t i = 0; i < c.top_words.size(); ++i) {
      s << c.cluster << ',' << c.weight << ',' << i + 1 << ',' << c.top_words[i].word << ','
        << c.top_words[i].probability << '\n';
    }
  }
  out << s.str();
}

inline void write_evolution_csv(const TopicReport& rep, std::ostream& out) {
  std::ostringstream s;
  s.precision(17);
  s << "# mean of unweighted per-document posteriors; " << rep.docs_without_year
    << " documents without a year excluded\n";
  s << "year,cluster,mean_posterior\n";
  for (const auto& [year, w] : rep.evolution) {
    for (std::size_t k = 0; k < w.size(); ++k) s << year << ',' << k << ',' << w[k] << '\n';
  }
  out << s.str();
}

inline void write_assignments_csv(const TopicReport& rep, std::ostream& out) {
  out << "doc_id,cluster\n";
  for (std::size_t l = 0; l < rep.assignment.size(); ++l) out << rep.doc_ids[l] << ',' << rep.assignment[l] << '\n';
}

/// Parses `doc_id,cluster` rows back into ids and labels.
inline std::pair<std::vector<std::string>, Assignment> read_assignments_csv(std::istream& in) {
  std::pair<std::vector<std::string>, Assignment> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line == "doc_id,cluster") continue;
    auto comma = line.find(',');
    auto label = comma == std::string::npos ? std::nullopt : detail::to_int(std::string_view(line).substr(comma + 1));
    if (!label || *label < 0) throw ParseError(lineno, "expected 'doc_id,cluster'");
    out.first.push_back(line.substr(0, comma));
    out.second.push_back(static_cast<std::size_t>(*label));
  }
  return out;
}

class IoError : public Error {
  using Error::Error;
};

/// Writes through a temporary file and renames it into place.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

template <typename Writer>
void atomic_write_with(const std::filesystem::path& path, Writer&& writer) {
  std::ostringstream s;
  writer(s);
  atomic_write(path, s.str());
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace catmix
