#pragma once

// Penalized-likelihood model selection: penalty shapes, slope-heuristics
// calibration, sweeps over the number of components and AIC/BIC baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "catmix/corpus.hpp"
#include "catmix/em.hpp"
#include "catmix/errors.hpp"

namespace catmix {

/// mu_n = 2 (sqrt(log(2 tau_n)) + sqrt(pi))^2 + 1 + log n with tau_n = log n.
inline double mu_n(double n) {
  if (!(n >= 2.0)) throw DomainError("mu_n requires n >= 2");
  const double tau = std::log(n);
  const double root = std::sqrt(std::log(2.0 * tau)) + std::sqrt(std::numbers::pi);
  return 2.0 * root * root + 1.0 + std::log(n);
}

/// lambda0 (mu_n K B + L log K + K log 2).
inline double theoretical_penalty(std::size_t K, std::size_t L, double n, std::size_t B, double lambda0) {
  if (K < 1 || L < 1) throw DomainError("theoretical penalty needs K >= 1 and L >= 1");
  const double k = static_cast<double>(K);
  return lambda0 * (mu_n(n) * k * static_cast<double>(B) + static_cast<double>(L) * std::log(k) + k * std::log(2.0));
}

/// lambda0 (mu_n K (B + 1) + L log K + K B log 2), defined on
/// {(1, 1)} and {K >= 1, B >= 2}.
inline double varying_b_penalty(std::size_t K, std::size_t B, std::size_t L, double n, double lambda0) {
  if (K < 1 || B < 1 || (B == 1 && K != 1)) {
    throw DomainError("(K=" + std::to_string(K) + ", B=" + std::to_string(B) + ") is outside the model collection");
  }
  const double k = static_cast<double>(K);
  const double b = static_cast<double>(B);
  return lambda0 * (mu_n(n) * k * (b + 1.0) + static_cast<double>(L) * std::log(k) + k * b * std::log(2.0));
}

struct InformationCriteria {
  double aic = 0.0;
  double bic = 0.0;
};

/// AIC and BIC on the total-contrast scale: contrast + D and contrast + D log(n) / 2.
inline InformationCriteria aic_bic(double min_contrast, double dimension, double n) {
  if (!(n >= 2.0)) throw DomainError("aic_bic requires n >= 2");
  return {min_contrast + dimension, min_contrast + dimension * std::log(n) / 2.0};
}

struct SlopePoint {
  double dimension = 0.0;
  double contrast = 0.0;
};

struct SlopeWindow {
  std::size_t size = 0;  // number of largest-dimension points used
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;  // residual-based; 0 for exact fits or 2-point windows
};

struct SlopeDiagnostics {
  std::vector<SlopeWindow> windows;  // sizes 3..N in increasing order
  std::size_t chosen_window = 0;
  bool plateau_found = false;
  double plateau_tolerance = 0.05;
};

struct SlopeEstimate {
  double lambda_min = 0.0;
  SlopeDiagnostics diagnostics;
};

namespace detail {

inline SlopeWindow ols_window(const std::vector<SlopePoint>& pts, std::size_t first) {
  const std::size_t w = pts.size() - first;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = first; i < pts.size(); ++i) {
    mx += pts[i].dimension;
    my += pts[i].contrast;
  }
  mx /= static_cast<double>(w);
  my /= static_cast<double>(w);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = first; i < pts.size(); ++i) {
    const double dx = pts[i].dimension - mx;
    sxx += dx * dx;
    sxy += dx * (pts[i].contrast - my);
  }
  if (!(sxx > 0.0)) throw DegenerateRegressionError("window of " + std::to_string(w) + " points has one dimension");
  SlopeWindow out;
  out.size = w;
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  if (w > 2) {
    double rss = 0.0;
    for (std::size_t i = first; i < pts.size(); ++i) {
      const double r = pts[i].contrast - (out.intercept + out.slope * pts[i].dimension);
      rss += r * r;
    }
    out.slope_stderr = std::sqrt(rss / static_cast<double>(w - 2) / sxx);
  }
  return out;
}

}  // namespace detail

/// Slope of the linear tail of contrast against dimension. Ordinary least
/// squares is fitted on the w largest-dimension points for w = 3..N; the
/// estimate comes from the largest w whose slope is within `plateau_tolerance`
/// (relative) of the slope at w - 1, or from w = 3 when no window qualifies.
inline SlopeEstimate slope_heuristics(std::vector<SlopePoint> points, double plateau_tolerance = 0.05) {
  if (points.size() < 4) {
    throw InsufficientDataError("slope heuristics needs at least 4 points, got " + std::to_string(points.size()));
  }
  std::stable_sort(points.begin(), points.end(),
                   [](const SlopePoint& a, const SlopePoint& b) { return a.dimension < b.dimension; });
  if (points.front().dimension == points.back().dimension) {
    throw DegenerateRegressionError("all points share one dimension");
  }
  SlopeEstimate est;
  est.diagnostics.plateau_tolerance = plateau_tolerance;
  const std::size_t N = points.size();
  for (std::size_t w = 3; w <= N; ++w) est.diagnostics.windows.push_back(detail::ols_window(points, N - w));

  const auto& ws = est.diagnostics.windows;
  std::size_t chosen = 0;
  for (std::size_t i = 1; i < ws.size(); ++i) {
    const double prev = ws[i - 1].slope;
    if (std::abs(ws[i].slope - prev) < plateau_tolerance * std::abs(prev)) {
      chosen = i;
      est.diagnostics.plateau_found = true;
    }
  }
  est.diagnostics.chosen_window = ws[chosen].size;
  est.lambda_min = std::abs(ws[chosen].slope);
  return est;
}

struct SweepRecord {
  std::size_t K = 0;
  std::size_t D_K = 0;
  double min_contrast = 0.0;
  std::shared_ptr<const FitResult> fit;  // null for imported tables
};

struct SweepFailure {
  std::size_t k_max = 0;
  std::string message;
};

/// Per-K best contrasts, sorted by K. Corpus sizes are kept for penalties.
struct SweepResult {
  std::size_t B = 0;
  std::size_t L = 0;
  std::uint64_t n = 0;
  std::vector<SweepRecord> records;
  std::vector<SweepFailure> failures;

  /// Inserts a record keyed by K, keeping the smaller contrast on collision.
  void add(SweepRecord rec) {
    if (!std::isfinite(rec.min_contrast)) throw ValueError("sweep contrast must be finite");
    auto it = std::lower_bound(records.begin(), records.end(), rec.K,
                               [](const SweepRecord& r, std::size_t k) { return r.K < k; });
    if (it != records.end() && it->K == rec.K) {
      if (rec.min_contrast < it->min_contrast) *it = std::move(rec);
    } else {
      records.insert(it, std::move(rec));
    }
  }

  std::vector<SlopePoint> slope_points() const {
    std::vector<SlopePoint> pts;
    for (const auto& r : records) pts.push_back({static_cast<double>(r.D_K), r.min_contrast});
    return pts;
  }
};

/// Runs robust EM once per ladder entry and keys results by realized K.
/// A failed fit is recorded and the sweep continues.
inline SweepResult run_sweep(const Corpus& corpus, const std::vector<std::size_t>& ladder, const EmConfig& config) {
  if (ladder.empty()) throw DomainError("sweep ladder is empty");
  SweepResult sweep{corpus.vocab_size(), corpus.num_docs(), corpus.total_tokens(), {}, {}};
  for (std::size_t k_max : ladder) {
    try {
      auto fit = std::make_shared<FitResult>(robust_em(corpus, k_max, config));
      sweep.add({fit->k_final, fit->k_final * corpus.vocab_size(), -fit->loglik(), fit});
    } catch (const Error& e) {
      sweep.failures.push_back({k_max, e.what()});
    }
  }
  return sweep;
}

struct CriterionRow {
  std::size_t K = 0;
  std::size_t D_K = 0;
  double min_contrast = 0.0;
  double penalty = 0.0;
  double criterion = 0.0;
};

struct SelectionReport {
  std::string mode;
  std::optional<double> lambda_min;
  double penalty_multiplier = 0.0;
  std::vector<CriterionRow> table;
  std::size_t K_hat = 0;
  std::optional<SlopeDiagnostics> diagnostics;
};

/// crit(K) = min_contrast(K) + penalty(K); the smallest K wins ties.
inline SelectionReport select_model(const SweepResult& sweep, const std::vector<double>& penalty) {
  if (sweep.records.empty()) throw ValueError("cannot select from an empty sweep");
  if (penalty.size() != sweep.records.size()) throw ShapeError("penalty must cover every swept K");
  SelectionReport rep;
  rep.mode = "custom";
  std::size_t best = 0;
  for (std::size_t i = 0; i < sweep.records.size(); ++i) {
    const auto& r = sweep.records[i];
    rep.table.push_back({r.K, r.D_K, r.min_contrast, penalty[i], r.min_contrast + penalty[i]});
    if (rep.table[i].criterion < rep.table[best].criterion) best = i;
  }
  rep.K_hat = rep.table[best].K;
  return rep;
}

/// pen(K) = multiplier * lambda_min * D_K with lambda_min from slope heuristics.
inline SelectionReport select_slope(const SweepResult& sweep, double multiplier = 2.0) {
  auto est = slope_heuristics(sweep.slope_points());
  std::vector<double> pen;
  for (const auto& r : sweep.records) pen.push_back(multiplier * est.lambda_min * static_cast<double>(r.D_K));
  auto rep = select_model(sweep, pen);
  rep.mode = "slope";
  rep.lambda_min = est.lambda_min;
  rep.penalty_multiplier = multiplier;
  rep.diagnostics = std::move(est.diagnostics);
  return rep;
}

/// Full shape lambda0 (mu_n D_K + L log K + K log 2). Without an explicit
/// lambda0 the constant is calibrated as multiplier * lambda_min / mu_n so the
/// D_K term matches the slope-calibrated penalty.
inline SelectionReport select_theoretical(const SweepResult& sweep, std::optional<double> lambda0,
                                          double multiplier = 2.0) {
  if (sweep.L == 0 || sweep.n < 2) throw DomainError("theoretical penalty needs L and n for the sweep");
  std::optional<SlopeEstimate> est;
  if (!lambda0) {
    est = slope_heuristics(sweep.slope_points());
    lambda0 = multiplier * est->lambda_min / mu_n(static_cast<double>(sweep.n));
  }
  std::vector<double> pen;
  for (const auto& r : sweep.records) {
    pen.push_back(theoretical_penalty(r.K, sweep.L, static_cast<double>(sweep.n), sweep.B, *lambda0));
  }
  auto rep = select_model(sweep, pen);
  rep.mode = "theoretical";
  rep.penalty_multiplier = *lambda0;
  if (est) {
    rep.lambda_min = est->lambda_min;
    rep.diagnostics = std::move(est->diagnostics);
  }
  return rep;
}

inline SelectionReport select_information(const SweepResult& sweep, bool bic) {
  if (sweep.n < 2) throw DomainError("AIC/BIC need the token count n of the sweep");
  std::vector<double> pen;
  for (const auto& r : sweep.records) {
    auto ic = aic_bic(r.min_contrast, static_cast<double>(r.D_K), static_cast<double>(sweep.n));
    pen.push_back((bic ? ic.bic : ic.aic) - r.min_contrast);
  }
  auto rep = select_model(sweep, pen);
  rep.mode = bic ? "bic" : "aic";
  rep.penalty_multiplier = bic ? std::log(static_cast<double>(sweep.n)) / 2.0 : 1.0;
  return rep;
}

/// CSV `K,D_K,min_contrast` preceded by one `#` line carrying B, L and n.
inline void write_sweep_csv(const SweepResult& sweep, std::ostream& out) {
  out << "# catmix-sweep v1 B=" << sweep.B << " L=" << sweep.L << " n=" << sweep.n << '\n';
  out << "K,D_K,min_contrast\n";
  std::ostringstream row;
  row.precision(17);
  for (const auto& r : sweep.records) row << r.K << ',' << r.D_K << ',' << r.min_contrast << '\n';
  out << row.str();
}

inline SweepResult read_sweep_csv(std::istream& in) {
  SweepResult sweep;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string tok;
      while (meta >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        auto key = tok.substr(0, eq);
        auto v = detail::to_int(std::string_view(tok).substr(eq + 1));
        if (!v || *v < 0) throw ParseError(lineno, "bad metadata value for " + key);
        if (key == "B") sweep.B = static_cast<std::size_t>(*v);
        if (key == "L") sweep.L = static_cast<std::size_t>(*v);
        if (key == "n") sweep.n = static_cast<std::uint64_t>(*v);
      }
      continue;
    }
    if (!header_seen) {
      if (line != "K,D_K,min_contrast") throw ParseError(lineno, "expected header 'K,D_K,min_contrast'");
      header_seen = true;
      continue;
    }
    std::istringstream fields(line);
    std::string k, d, c;
    if (!std::getline(fields, k, ',') || !std::getline(fields, d, ',') || !std::getline(fields, c)) {
      throw ParseError(lineno, "expected three comma-separated fields");
    }
    auto kv = detail::to_int(k);
    auto dv = detail::to_int(d);
    if (!kv || !dv || *kv < 1 || *dv < 0) throw ParseError(lineno, "K and D_K must be non-negative integers");
    double contrast = 0.0;
    try {
      std::size_t used = 0;
      contrast = std::stod(c, &used);
      if (used != c.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(lineno, "min_contrast is not a number");
    }
    const auto K = static_cast<std::size_t>(*kv);
    const auto D = static_cast<std::size_t>(*dv);
    if (sweep.B == 0 && D % K == 0) sweep.B = D / K;
    if (D != K * sweep.B) throw ParseError(lineno, "D_K must equal K*B");
    sweep.add({K, D, contrast, nullptr});
  }
  if (!header_seen) throw ParseError(lineno + 1, "missing CSV header");
  return sweep;
}

inline nlohmann::json selection_to_json(const SelectionReport& rep) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& r : rep.table) {
    table.push_back({{"K", r.K}, {"D_K", r.D_K}, {"min_contrast", r.min_contrast}, {"penalty", r.penalty},
                     {"criterion", r.criterion}});
  }
  nlohmann::json j = {{"format", "catmix-selection"}, {"format_version", 1},
                      {"mode", rep.mode},            {"K_hat", rep.K_hat},
                      {"penalty_multiplier", rep.penalty_multiplier}, {"criterion", table}};
  j["lambda_min"] = rep.lambda_min ? nlohmann::json(*rep.lambda_min) : nlohmann::json(nullptr);
  if (rep.diagnostics) {
    nlohmann::json windows = nlohmann::json::array();
    for (const auto& w : rep.diagnostics->windows) {
      windows.push_back({{"size", w.size}, {"slope", w.slope}, {"intercept", w.intercept}, {"stderr", w.slope_stderr}});
    }
    j["diagnostics"] = {{"windows", windows},
                        {"chosen_window", rep.diagnostics->chosen_window},
                        {"plateau_found", rep.diagnostics->plateau_found},
                        {"plateau_tolerance", rep.diagnostics->plateau_tolerance}};
  } else {
    j["diagnostics"] = nullptr;
  }
  return j;
}

}  // namespace catmix
