#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "catmix/em.hpp"
#include "catmix/synth.hpp"
#include "oracles.hpp"

using namespace catmix;

namespace {

MixtureModel model_from_planted(const PlantedMixture& mix, double epsilon) {
  std::vector<std::vector<double>> rows;
  for (const auto& r : mix.densities) rows.push_back(water_fill_project(r, epsilon));
  return MixtureModel::from_densities(mix.pi, rows, epsilon);
}

}  // namespace

TEST(PlantedMixture, ReachesRequestedSeparation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto mix = make_planted_mixture(3, 20, 0.5, seed);
    EXPECT_GE(mix.separation(), 0.5);
    EXPECT_NO_THROW(mix.validate());
    for (double p : mix.pi) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
  }
  EXPECT_THROW(make_planted_mixture(3, 2, 50.0, 1, 20), DomainError);
}

TEST(PlantedMixture, SeedReproducible) {
  auto a = make_planted_mixture(4, 9, 0.3, 17);
  auto b = make_planted_mixture(4, 9, 0.3, 17);
  EXPECT_EQ(a.densities, b.densities);
  auto c = make_planted_mixture(4, 9, 0.3, 18);
  EXPECT_NE(a.densities, c.densities);
}

TEST(GenerateCorpus, SingleComponentLabelsAndLengths) {
  auto mix = make_planted_mixture(1, 5, 0.0, 2);
  auto pc = generate_corpus(mix, 40, {3, 9}, 7);
  EXPECT_EQ(pc.corpus.num_docs(), 40u);
  for (std::size_t l = 0; l < 40; ++l) {
    EXPECT_EQ(pc.labels_true[l], 0u);
    EXPECT_GE(pc.corpus.doc(l).length, 3u);
    EXPECT_LE(pc.corpus.doc(l).length, 9u);
  }
}

TEST(GenerateCorpus, ZeroWeightComponentNeverDrawn) {
  PlantedMixture mix{{1.0, 0.0}, {{0.5, 0.5}, {0.9, 0.1}}};
  auto pc = generate_corpus(mix, 500, {1, 4}, 3);
  EXPECT_TRUE(std::all_of(pc.labels_true.begin(), pc.labels_true.end(), [](std::size_t z) { return z == 0; }));
}

TEST(GenerateCorpus, LabelAndWordFrequenciesWithinThreeStandardErrors) {
  PlantedMixture mix{{0.2, 0.3, 0.5}, {{0.7, 0.2, 0.1}, {0.1, 0.1, 0.8}, {0.3, 0.4, 0.3}}};
  const std::size_t L = 20000;
  auto pc = generate_corpus(mix, L, {10, 10}, 11);
  std::vector<double> label_count(3, 0.0);
  std::vector<std::vector<double>> words(3, std::vector<double>(3, 0.0));
  for (std::size_t l = 0; l < L; ++l) {
    const auto z = pc.labels_true[l];
    label_count[z] += 1;
    for (const auto& wc : pc.corpus.doc(l).counts) words[z][wc.word] += static_cast<double>(wc.count);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const double p = mix.pi[k];
    EXPECT_NEAR(label_count[k] / L, p, 3 * std::sqrt(p * (1 - p) / L));
    const double tokens = label_count[k] * 10;
    for (std::size_t b = 0; b < 3; ++b) {
      const double f = mix.densities[k][b];
      EXPECT_NEAR(words[k][b] / tokens, f, 3 * std::sqrt(f * (1 - f) / tokens));
    }
  }
}

TEST(GenerateCorpus, SeedReproducible) {
  auto mix = make_planted_mixture(3, 12, 0.5, 5);
  auto a = generate_corpus(mix, 50, {20, 40}, 9);
  auto b = generate_corpus(mix, 50, {20, 40}, 9);
  EXPECT_EQ(a.corpus, b.corpus);
  EXPECT_EQ(a.labels_true, b.labels_true);
  EXPECT_THROW(generate_corpus(mix, 5, {4, 3}, 1), DomainError);
}

TEST(BruteForce, SingleComponentAndSingleToken) {
  Corpus one({{"1", {{1, 1}}, 0}}, Vocabulary({"a", "b"}));
  auto m = MixtureModel::from_densities({0.4, 0.6}, {{0.3, 0.7}, {0.8, 0.2}}, 0.1);
  EXPECT_NEAR(brute_force_loglik(one, m), std::log(0.4 * 0.7 + 0.6 * 0.2), 1e-15);
  Corpus three({{"1", {{0, 2}, {1, 1}}, 0}}, Vocabulary({"a", "b"}));
  auto k1 = MixtureModel::from_densities({1.0}, {{0.3, 0.7}}, 0.1);
  EXPECT_NEAR(brute_force_loglik(three, k1), std::log(0.3 * 0.3 * 0.7), 1e-15);
}

TEST(BruteForce, RefusesDocumentsBeyondRange) {
  Corpus longdoc({{"1", {{0, 400}}, 0}}, Vocabulary({"a", "b"}));
  auto m = MixtureModel::from_densities({1.0}, {{0.5, 0.5}}, 1.0 / 400);
  EXPECT_THROW(brute_force_loglik(longdoc, m), OracleInfeasibleError);
}

TEST(Agreement, IdentityAndPermutation) {
  std::vector<std::size_t> truth{0, 0, 1, 1, 2, 2};
  EXPECT_EQ(best_permutation_agreement(truth, 3, truth, 3), 1.0);
  std::vector<std::size_t> relabeled{2, 2, 0, 0, 1, 1};
  EXPECT_EQ(best_permutation_agreement(truth, 3, relabeled, 3), 1.0);
  std::vector<std::size_t> merged{0, 0, 0, 0, 1, 1};
  EXPECT_NEAR(best_permutation_agreement(truth, 3, merged, 2), 4.0 / 6.0, 1e-15);
  EXPECT_THROW(best_permutation_agreement(truth, 3, {0, 1}, 2), ShapeError);
}

TEST(Agreement, RandomLabelsNearChance) {
  Rng rng(3);
  std::vector<std::size_t> truth, guess;
  for (int i = 0; i < 6000; ++i) {
    truth.push_back(rng.integer(0, 2));
    guess.push_back(rng.integer(0, 2));
  }
  const double a = best_permutation_agreement(truth, 3, guess, 3);
  EXPECT_GT(a, 1.0 / 3.0 - 0.02);
  EXPECT_LT(a, 1.0 / 3.0 + 0.03);
}

TEST(Agreement, HungarianMatchesExhaustiveSearch) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = rng.integer(1, 7);
    std::vector<std::vector<double>> w(n, std::vector<double>(n));
    for (auto& row : w) {
      for (auto& x : row) x = static_cast<double>(rng.integer(0, 20));
    }
    auto score = [&](const std::vector<std::size_t>& m) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += w[i][m[i]];
      return s;
    };
    auto h = detail::hungarian_max(w);
    auto e = detail::exhaustive_max(w);
    EXPECT_EQ(score(h), score(e));
    auto sorted = h;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(sorted[i], i);
  }
}

TEST(EvaluateRun, TruthScoresPerfectly) {
  auto mix = make_planted_mixture(3, 15, 1.0, 4);
  auto pc = generate_corpus(mix, 300, {60, 120}, 5);
  const double eps = default_epsilon(pc.corpus.total_tokens());
  auto m = model_from_planted(mix, eps);
  auto ev = evaluate_run(pc, m);
  EXPECT_GT(ev.agreement, 0.97);
  // The floor can move coordinates of the planted rows by at most B * eps.
  EXPECT_LT(ev.risk, 1e-3);
  EXPECT_EQ(ev.labels.size(), pc.corpus.num_docs());
}

TEST(EvaluateRun, RiskShrinksAsCorpusGrows) {
  std::vector<double> mean_risk;
  for (std::size_t L : {100, 400, 1600}) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      auto mix = make_planted_mixture(3, 20, 0.5, 100 + seed);
      auto pc = generate_corpus(mix, L, {50, 200}, 200 + seed);
      EmConfig cfg;
      cfg.rng_seed = seed;
      total += evaluate_run(pc, robust_em(pc.corpus, 3, cfg)).risk;
    }
    mean_risk.push_back(total / 4);
  }
  EXPECT_GT(mean_risk[0], mean_risk[1]);
  EXPECT_GT(mean_risk[1], mean_risk[2]);
}
