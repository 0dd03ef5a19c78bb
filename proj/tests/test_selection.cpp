#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "catmix/selection.hpp"
#include "oracles.hpp"

using namespace catmix;

namespace {

SweepResult linear_sweep(std::size_t B, double intercept, double slope, std::size_t k_max) {
  SweepResult s;
  s.B = B;
  s.L = 100;
  s.n = 10000;
  for (std::size_t K = 1; K <= k_max; ++K) {
    const double D = static_cast<double>(K * B);
    s.add({K, K * B, intercept + slope * D, nullptr});
  }
  return s;
}

}  // namespace

// Frozen at 40 digits from an independent arbitrary-precision evaluation.
TEST(MuN, FrozenValues) {
  EXPECT_NEAR(mu_n(1e4), 34.42200973650575559884, 1e-12);
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(mu_n(e2), 20.40339374342858150160, 1e-12);
  const double closed = 2 * std::pow(std::sqrt(std::log(4.0)) + std::sqrt(std::numbers::pi), 2) + 3;
  EXPECT_NEAR(mu_n(e2), closed, 1e-12);
}

TEST(MuN, MatchesOracleAndIncreases) {
  double prev = 0.0;
  for (double n = 2.0; n < 1e9; n *= 3.7) {
    const double v = mu_n(n);
    EXPECT_NEAR(v, static_cast<double>(oracle::mu(oracle::Ext(n))), 1e-12 * v);
    EXPECT_GT(v, prev);
    prev = v;
  }
  EXPECT_THROW(mu_n(1.0), DomainError);
}

TEST(Penalty, FrozenValues) {
  EXPECT_NEAR(theoretical_penalty(2, 10, 100, 3, 1.0), 169.67800804249453671649, 1e-10);
  EXPECT_NEAR(varying_b_penalty(3, 5, 20, 500, 1.0), 568.63872753744368915641, 1e-10);
}

TEST(Penalty, MatchesOracleOnAGrid) {
  for (int K : {1, 2, 5, 17}) {
    for (int B : {2, 7, 300}) {
      for (int L : {1, 40, 1500}) {
        for (double n : {10.0, 1e4, 1.9e6}) {
          const double t = theoretical_penalty(K, L, n, B, 0.37);
          EXPECT_NEAR(t, oracle::theoretical_penalty(K, B, L, n, 0.37), 1e-12 * t);
          const double v = varying_b_penalty(K, B, L, n, 0.37);
          EXPECT_NEAR(v, oracle::varying_b_penalty(K, B, L, n, 0.37), 1e-12 * v);
        }
      }
    }
  }
}

TEST(Penalty, SingleWordSingleComponentAndDomain) {
  const double n = 50.0;
  EXPECT_NEAR(varying_b_penalty(1, 1, 9, n, 1.0), 2 * mu_n(n) + std::log(2.0), 1e-12);
  EXPECT_THROW(varying_b_penalty(2, 1, 9, n, 1.0), DomainError);
  EXPECT_THROW(varying_b_penalty(0, 3, 9, n, 1.0), DomainError);
  EXPECT_THROW(theoretical_penalty(0, 9, n, 3, 1.0), DomainError);
}

TEST(Penalty, HomogeneousInLambda0AndIncreasingInK) {
  for (std::size_t K = 1; K < 30; ++K) {
    const double a = theoretical_penalty(K, 200, 1e5, 40, 1.0);
    EXPECT_NEAR(theoretical_penalty(K, 200, 1e5, 40, 2.5), 2.5 * a, 1e-12 * a);
    EXPECT_LT(a, theoretical_penalty(K + 1, 200, 1e5, 40, 1.0));
  }
}

TEST(InformationCriteria, ExampleValues) {
  auto ic = aic_bic(5000.0, 60.0, 1000.0);
  EXPECT_DOUBLE_EQ(ic.aic, 5060.0);
  EXPECT_NEAR(ic.bic, 5207.23265836946411156162, 1e-9);
  EXPECT_THROW(aic_bic(1.0, 1.0, 1.0), DomainError);
}

TEST(SlopeHeuristics, RecoversExactLine) {
  std::vector<SlopePoint> pts;
  for (int d = 10; d <= 100; d += 10) pts.push_back({double(d), 500.0 - 0.75 * d});
  auto est = slope_heuristics(pts);
  EXPECT_NEAR(est.lambda_min, 0.75, 1e-12);
  EXPECT_TRUE(est.diagnostics.plateau_found);
  EXPECT_EQ(est.diagnostics.chosen_window, pts.size());
  EXPECT_EQ(est.diagnostics.windows.size(), pts.size() - 2);
}

TEST(SlopeHeuristics, UsesOnlyTheLinearTail) {
  std::vector<SlopePoint> pts;
  for (int d = 1; d <= 12; ++d) {
    // Steep decrease for small dimensions, then a slope of -1.
    const double c = d <= 4 ? 1000.0 - 100.0 * d : 600.0 - (d - 4);
    pts.push_back({double(d), c});
  }
  auto est = slope_heuristics(pts);
  EXPECT_NEAR(est.lambda_min, 1.0, 1e-9);
  EXPECT_LE(est.diagnostics.chosen_window, 9u);
}

TEST(SlopeHeuristics, FallsBackToSmallestWindow) {
  // Curvature everywhere: no two consecutive window slopes agree within 5%.
  std::vector<SlopePoint> pts;
  for (int d = 1; d <= 8; ++d) pts.push_back({double(d), std::pow(2.0, -d) * 1000.0 + d * d * 30.0});
  auto est = slope_heuristics(pts);
  EXPECT_FALSE(est.diagnostics.plateau_found);
  EXPECT_EQ(est.diagnostics.chosen_window, 3u);
  EXPECT_DOUBLE_EQ(est.lambda_min, std::abs(est.diagnostics.windows.front().slope));
}

TEST(SlopeHeuristics, InvariantToShiftAndEquivariantToScale) {
  Rng rng(4);
  std::vector<SlopePoint> pts;
  for (int d = 5; d <= 60; d += 5) pts.push_back({double(d), 300.0 - 2.0 * d + rng.normal()});
  auto base = slope_heuristics(pts);
  auto shifted = pts, scaled = pts;
  for (auto& p : shifted) p.contrast += 1234.5;
  for (auto& p : scaled) p.contrast *= 3.0;
  EXPECT_NEAR(slope_heuristics(shifted).lambda_min, base.lambda_min, 1e-9);
  EXPECT_NEAR(slope_heuristics(scaled).lambda_min, 3.0 * base.lambda_min, 1e-9);
}

TEST(SlopeHeuristics, NoisyLinesStayWithinStandardErrors) {
  Rng rng(2024);
  const double lambda = 0.6, sigma = 4.0;
  int covered = 0;
  const int reps = 400;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<SlopePoint> pts;
    for (int K = 1; K <= 10; ++K) {
      const double D = 30.0 * K;
      pts.push_back({D, 5000.0 - lambda * D + sigma * rng.normal()});
    }
    auto est = slope_heuristics(pts);
    const auto& w = est.diagnostics.windows[est.diagnostics.chosen_window - 3];
    if (std::abs(est.lambda_min - lambda) <= 3.0 * w.slope_stderr) ++covered;
  }
  EXPECT_GE(covered, static_cast<int>(0.9 * reps));
}

TEST(SlopeHeuristics, Errors) {
  std::vector<SlopePoint> three{{1, 3}, {2, 2}, {3, 1}};
  EXPECT_THROW(slope_heuristics(three), InsufficientDataError);
  std::vector<SlopePoint> flat{{5, 3}, {5, 2}, {5, 1}, {5, 0}};
  EXPECT_THROW(slope_heuristics(flat), DegenerateRegressionError);
  std::vector<SlopePoint> tail_flat{{1, 9}, {5, 3}, {5, 2}, {5, 1}};
  EXPECT_THROW(slope_heuristics(tail_flat), DegenerateRegressionError);
}

TEST(SelectModel, ZeroPenaltyPicksSmallestContrast) {
  auto s = linear_sweep(10, 1000.0, -1.0, 6);
  auto rep = select_model(s, std::vector<double>(6, 0.0));
  EXPECT_EQ(rep.K_hat, 6u);
  EXPECT_EQ(rep.table.size(), 6u);
}

TEST(SelectModel, LinearContrastWithSlopePenaltyPicksOne) {
  // Contrast decreasing at exactly lambda_min: doubling the slope makes the
  // criterion increase in D, so K = 1 wins.
  auto s = linear_sweep(10, 1000.0, -0.5, 8);
  auto rep = select_slope(s);
  EXPECT_NEAR(*rep.lambda_min, 0.5, 1e-12);
  EXPECT_EQ(rep.K_hat, 1u);
  for (const auto& row : rep.table) EXPECT_NEAR(row.criterion, 1000.0 + 0.5 * row.D_K, 1e-9);
}

TEST(SelectModel, TiesGoToSmallerK) {
  auto s = linear_sweep(4, 100.0, 0.0, 5);
  auto rep = select_model(s, std::vector<double>(5, 0.0));
  EXPECT_EQ(rep.K_hat, 1u);
  EXPECT_THROW(select_model(SweepResult{}, {}), ValueError);
  EXPECT_THROW(select_model(s, {1.0}), ShapeError);
}

TEST(SelectModel, InformationCriteriaAndTheoretical) {
  // Elbow at K=3: steep gains before, almost none after.
  SweepResult s;
  s.B = 20;
  s.L = 200;
  s.n = 40000;
  const double contrast[] = {9000, 8000, 7000, 6990, 6980, 6970, 6960, 6950};
  for (std::size_t K = 1; K <= 8; ++K) s.add({K, K * 20, contrast[K - 1], nullptr});
  EXPECT_EQ(select_information(s, true).K_hat, 3u);
  EXPECT_EQ(select_information(s, false).K_hat, 3u);
  EXPECT_EQ(select_slope(s).K_hat, 3u);
  auto th = select_theoretical(s, std::nullopt);
  EXPECT_EQ(th.K_hat, 3u);
  EXPECT_NEAR(th.penalty_multiplier, 2.0 * *th.lambda_min / mu_n(40000.0), 1e-15);
  auto fixed = select_theoretical(s, 0.01);
  EXPECT_NEAR(fixed.table[1].penalty, theoretical_penalty(2, 200, 40000.0, 20, 0.01), 1e-12);
}

TEST(Sweep, AddKeepsSmallerContrastPerK) {
  SweepResult s;
  s.add({3, 30, 50.0, nullptr});
  s.add({1, 10, 90.0, nullptr});
  s.add({3, 30, 40.0, nullptr});
  s.add({3, 30, 45.0, nullptr});
  ASSERT_EQ(s.records.size(), 2u);
  EXPECT_EQ(s.records[0].K, 1u);
  EXPECT_EQ(s.records[1].min_contrast, 40.0);
  EXPECT_THROW(s.add({2, 20, NAN, nullptr}), ValueError);
}

TEST(Sweep, CsvRoundTripIsExact) {
  auto s = linear_sweep(7, 12345.678901234567, -0.3333333333333333, 9);
  std::stringstream buf;
  write_sweep_csv(s, buf);
  auto back = read_sweep_csv(buf);
  EXPECT_EQ(back.B, 7u);
  EXPECT_EQ(back.L, 100u);
  EXPECT_EQ(back.n, 10000u);
  ASSERT_EQ(back.records.size(), s.records.size());
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    EXPECT_EQ(back.records[i].K, s.records[i].K);
    EXPECT_EQ(back.records[i].min_contrast, s.records[i].min_contrast);
  }
}

TEST(Sweep, CsvWithoutMetadataInfersB) {
  std::istringstream in("K,D_K,min_contrast\n1,5,10\n2,10,8\n2,10,7.5\n");
  auto s = read_sweep_csv(in);
  EXPECT_EQ(s.B, 5u);
  ASSERT_EQ(s.records.size(), 2u);
  EXPECT_EQ(s.records[1].min_contrast, 7.5);
  std::istringstream bad("K,D_K,min_contrast\n1,5,10\n2,11,8\n");
  EXPECT_THROW(read_sweep_csv(bad), ParseError);
  std::istringstream junk("K,D_K,min_contrast\n1,5,ten\n");
  EXPECT_THROW(read_sweep_csv(junk), ParseError);
}
