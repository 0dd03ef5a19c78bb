#pragma once

// Synthetic corpora drawn from known mixtures, a per-token likelihood oracle
// and risk/agreement evaluation against the planted truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "catmix/corpus.hpp"
#include "catmix/em.hpp"
#include "catmix/errors.hpp"
#include "catmix/mixture.hpp"
#include "catmix/random.hpp"

namespace catmix {

struct PlantedMixture {
  std::vector<double> pi;
  std::vector<std::vector<double>> densities;

  std::size_t num_components() const noexcept { return pi.size(); }
  std::size_t vocab_size() const noexcept { return densities.empty() ? 0 : densities.front().size(); }

  /// Smallest KL(row_i || row_j) over ordered pairs i != j; +inf for one row.
  double separation() const {
    double sep = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < densities.size(); ++i) {
      for (std::size_t j = 0; j < densities.size(); ++j) {
        if (i == j) continue;
        auto kl = kl_categorical(densities[i], densities[j]);
        sep = std::min(sep, kl ? *kl : std::numeric_limits<double>::infinity());
      }
    }
    return sep;
  }

  void validate() const {
    if (pi.empty()) throw DomainError("planted mixture needs K_true >= 1");
    if (densities.size() != pi.size()) throw ShapeError("planted weights and rows disagree");
    auto simplex = [](const std::vector<double>& v, const char* what) {
      double s = 0.0;
      for (double x : v) {
        if (!(x >= 0.0)) throw ValueError(std::string(what) + " has a negative entry");
        s += x;
      }
      if (std::abs(s - 1.0) > 1e-10) throw ValueError(std::string(what) + " does not sum to one");
    };
    simplex(pi, "planted weights");
    for (const auto& row : densities) {
      if (row.size() != vocab_size()) throw ShapeError("ragged planted rows");
      simplex(row, "planted density");
    }
  }
};

/// Uniform weights and Dirichlet(1) rows, redrawn until every ordered pair
/// of rows has KL >= min_separation.
inline PlantedMixture make_planted_mixture(std::size_t K, std::size_t B, double min_separation, std::uint64_t seed,
                                           std::size_t max_attempts = 10000) {
  if (K < 1 || B < 1) throw DomainError("planted mixture needs K >= 1 and B >= 1");
  Rng rng(seed);
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    PlantedMixture mix;
    mix.pi.assign(K, 1.0 / static_cast<double>(K));
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> row(B);
      for (auto& x : row) x = rng.exponential();
      const double s = std::accumulate(row.begin(), row.end(), 0.0);
      for (auto& x : row) x /= s;
      mix.densities.push_back(std::move(row));
    }
    if (mix.separation() >= min_separation) return mix;
  }
  throw DomainError("could not reach separation " + std::to_string(min_separation) + " for K=" + std::to_string(K) +
                    ", B=" + std::to_string(B));
}

struct PlantedCorpus {
  Corpus corpus;
  std::vector<std::size_t> labels_true;
  std::vector<std::vector<double>> true_densities;  // s_l per document
  std::size_t K_true = 0;
};

struct LengthLaw {
  std::uint64_t min = 1;
  std::uint64_t max = 1;
};

/// Draws z_l from pi, n_l uniformly in the length range, then n_l i.i.d.
/// words from row z_l. Document ids are "1".."L".
inline PlantedCorpus generate_corpus(const PlantedMixture& mix, std::size_t L, LengthLaw lengths, std::uint64_t seed) {
  mix.validate();
  if (L < 1) throw DomainError("L must be >= 1");
  if (lengths.min < 1 || lengths.max < lengths.min) throw DomainError("length range must satisfy 1 <= min <= max");
  const std::size_t B = mix.vocab_size();
  std::vector<std::vector<double>> cumulative;
  for (const auto& row : mix.densities) {
    std::vector<double> c(B);
    std::partial_sum(row.begin(), row.end(), c.begin());
    cumulative.push_back(std::move(c));
  }
  Rng rng(seed);
  PlantedCorpus out;
  out.K_true = mix.num_components();
  std::vector<Document> docs;
  docs.reserve(L);
  std::vector<std::uint64_t> counts(B);
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t z = rng.categorical(mix.pi, 1.0);
    const std::uint64_t len = rng.integer(lengths.min, lengths.max);
    std::fill(counts.begin(), counts.end(), 0);
    const auto& cum = cumulative[z];
    for (std::uint64_t i = 0; i < len; ++i) {
      const double u = rng.uniform() * cum.back();
      auto b = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
      ++counts[std::min(b, B - 1)];
    }
    Document d;
    d.id = std::to_string(l + 1);
    for (std::size_t b = 0; b < B; ++b) {
      if (counts[b] > 0) d.counts.push_back({static_cast<WordIndex>(b), counts[b]});
    }
    docs.push_back(std::move(d));
    out.labels_true.push_back(z);
    out.true_densities.push_back(mix.densities[z]);
  }
  std::vector<std::string> words;
  for (std::size_t b = 0; b < B; ++b) words.push_back("w" + std::to_string(b));
  out.corpus = Corpus(std::move(docs), Vocabulary(std::move(words)));
  return out;
}

using ExtendedFloat = boost::multiprecision::cpp_bin_float_50;

/// sum_l log sum_k pi_k prod_i f_k(x_l^i), evaluated token by token in
/// 50-digit arithmetic. Requires n_l * tau_n <= 600 for every document.
inline double brute_force_loglik(const Corpus& corpus, const MixtureModel& model) {
  detail::check_shape(corpus, model);
  const double tau = model.tau();
  const std::size_t K = model.num_components();
  std::vector<std::vector<ExtendedFloat>> f(K, std::vector<ExtendedFloat>(model.vocab_size()));
  for (std::size_t k = 0; k < K; ++k) {
    auto row = model.log_density(k);
    for (std::size_t b = 0; b < row.size(); ++b) f[k][b] = boost::multiprecision::exp(ExtendedFloat(row[b]));
  }
  ExtendedFloat total = 0;
  for (const auto& d : corpus.docs()) {
    if (static_cast<double>(d.length) * tau > 600.0) {
      throw OracleInfeasibleError("document '" + d.id + "' too long for the product oracle");
    }
    ExtendedFloat mixture_sum = 0;
    for (std::size_t k = 0; k < K; ++k) {
      ExtendedFloat prod = ExtendedFloat(model.weight(k));
      for (const auto& wc : d.counts) {
        for (std::uint64_t i = 0; i < wc.count; ++i) prod *= f[k][wc.word];
      }
      mixture_sum += prod;
    }
    total += boost::multiprecision::log(mixture_sum);
  }
  return static_cast<double>(total);
}

namespace detail {

/// Maximum-weight perfect matching on a square matrix (Hungarian method on
/// negated weights). Returns column assigned to each row.
inline std::vector<std::size_t> hungarian_max(const std::vector<std::vector<double>>& weight) {
  const std::size_t n = weight.size();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials formulation.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -weight[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

inline std::vector<std::size_t> exhaustive_max(const std::vector<std::vector<double>>& weight) {
  const std::size_t n = weight.size();
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best_score = -std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += weight[i][perm[i]];
    if (s > best_score) {
      best_score = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace detail

/// Fraction of documents whose label agrees with the truth under the best
/// one-to-one relabeling. Components left unmatched count as errors.
/// Exhaustive search up to 8 labels, Hungarian matching above.
inline double best_permutation_agreement(const std::vector<std::size_t>& truth, std::size_t k_truth,
                                         const std::vector<std::size_t>& predicted, std::size_t k_predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("label vectors differ in length");
  if (truth.empty()) return 1.0;
  const std::size_t n = std::max(k_truth, k_predicted);
  std::vector<std::vector<double>> confusion(n, std::vector<double>(n, 0.0));
  for (std::size_t l = 0; l < truth.size(); ++l) {
    if (truth[l] >= k_truth || predicted[l] >= k_predicted) throw IndexError("label outside its range");
    confusion[truth[l]][predicted[l]] += 1.0;
  }
  auto match = n <= 8 ? detail::exhaustive_max(confusion) : detail::hungarian_max(confusion);
  double agree = 0.0;
  for (std::size_t i = 0; i < n; ++i) agree += confusion[i][match[i]];
  return agree / static_cast<double>(truth.size());
}

struct RunEvaluation {
  double risk = 0.0;
  double agreement = 0.0;
  Assignment labels;
};

/// Weighted KL risk of the MAP-assigned fitted densities against the planted
/// ones, plus best-permutation label agreement.
inline RunEvaluation evaluate_run(const PlantedCorpus& planted, const MixtureModel& model) {
  RunEvaluation ev;
  ev.labels = map_assign(planted.corpus, model);
  std::vector<std::uint64_t> lengths;
  for (const auto& d : planted.corpus.docs()) lengths.push_back(d.length);
  ev.risk = weighted_kl_risk(planted.true_densities, model, ev.labels, lengths);
  ev.agreement = best_permutation_agreement(planted.labels_true, planted.K_true, ev.labels, model.num_components());
  return ev;
}

inline RunEvaluation evaluate_run(const PlantedCorpus& planted, const FitResult& fit) {
  return evaluate_run(planted, fit.model);
}

}  // namespace catmix
