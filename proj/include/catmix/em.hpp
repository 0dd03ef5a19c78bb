#pragma once

// Expectation-maximization for floor-constrained multinomial mixtures, with
// multi-start short runs and annihilation of low-weight components.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "catmix/corpus.hpp"
#include "catmix/errors.hpp"
#include "catmix/mixture.hpp"
#include "catmix/parallel.hpp"
#include "catmix/random.hpp"

namespace catmix {

/// Row-stochastic L x K posterior matrix.
class Responsibilities {
 public:
  Responsibilities() = default;
  Responsibilities(std::size_t docs, std::size_t components)
      : L_(docs), K_(components), r_(docs * components, 0.0) {}

  std::size_t num_docs() const noexcept { return L_; }
  std::size_t num_components() const noexcept { return K_; }

  std::span<double> row(std::size_t l) { return std::span<double>(r_).subspan(l * K_, K_); }
  std::span<const double> row(std::size_t l) const { return std::span<const double>(r_).subspan(l * K_, K_); }
  double operator()(std::size_t l, std::size_t k) const { return r_[l * K_ + k]; }

 private:
  std::size_t L_ = 0;
  std::size_t K_ = 0;
  std::vector<double> r_;
};

struct EStepResult {
  Responsibilities resp;
  double loglik = 0.0;
};

/// Posterior responsibilities and total log-likelihood. Documents may be
/// processed on several threads; the total is reduced in document order.
inline EStepResult e_step(const Corpus& corpus, const MixtureModel& model, std::size_t threads = 1) {
  detail::check_shape(corpus, model);
  const std::size_t L = corpus.num_docs();
  const std::size_t K = model.num_components();
  EStepResult out{Responsibilities(L, K), 0.0};
  std::vector<double> doc_ll(L);
  constexpr std::size_t kBlock = 64;
  const std::size_t blocks = (L + kBlock - 1) / kBlock;
  parallel_for(blocks, threads, [&](std::size_t blk) {
    DocLogJoint joint;
    std::vector<double> scratch;
    const std::size_t end = std::min(L, (blk + 1) * kBlock);
    for (std::size_t l = blk * kBlock; l < end; ++l) {
      doc_log_joint_into(corpus.doc(l).counts, model, joint, scratch);
      auto row = out.resp.row(l);
      for (std::size_t k = 0; k < K; ++k) {
        row[k] = joint.terms[k] == kNegInf ? 0.0 : std::exp(joint.terms[k] - joint.log_density);
      }
      doc_ll[l] = joint.log_density;
    }
  });
  for (double v : doc_ll) out.loglik += v;
  return out;
}

/// Maximizes sum_b w_b log f_b over the simplex subject to f_b >= epsilon.
/// The solution is f_b = max(epsilon, w_b / lambda) with lambda fixed by the
/// sum constraint; the set of coordinates above the floor is a prefix of the
/// weights sorted in decreasing order.
inline std::vector<double> water_fill_project(std::span<const double> weights, double epsilon) {
  const std::size_t B = weights.size();
  if (B == 0) throw ShapeError("cannot project an empty vector");
  if (!(epsilon >= 0.0)) throw DomainError("floor must be nonnegative");
  if (static_cast<double>(B) * epsilon > 1.0) {
    throw InfeasibleError("floor " + std::to_string(epsilon) + " infeasible for B=" + std::to_string(B));
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValueError("projection weights must be finite and nonnegative");
    total += w;
  }
  if (total <= 0.0) return std::vector<double>(B, 1.0 / static_cast<double>(B));

  std::vector<std::size_t> order(B);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });

  // Largest prefix size m whose smallest member stays above the floor.
  std::size_t free_count = 0;
  double lambda = 0.0;
  double prefix = 0.0;
  for (std::size_t m = 1; m <= B; ++m) {
    const double w = weights[order[m - 1]];
    if (w <= 0.0) break;
    prefix += w;
    const double mass = 1.0 - static_cast<double>(B - m) * epsilon;
    if (mass <= 0.0) break;
    const double lam = prefix / mass;
    if (w / lam > epsilon) {
      free_count = m;
      lambda = lam;
    } else {
      break;
    }
  }

  std::vector<double> f(B, epsilon);
  if (free_count == 0) {
    // Only reachable when B * epsilon == 1.
    return f;
  }
  const double floor_mass = static_cast<double>(B - free_count) * epsilon;
  double free_sum = 0.0;
  for (std::size_t i = 0; i < free_count; ++i) {
    const std::size_t b = order[i];
    f[b] = std::max(epsilon, weights[b] / lambda);
    free_sum += f[b];
  }
  // Absorb rounding so the row sums to one.
  const double scale = (1.0 - floor_mass) / free_sum;
  for (std::size_t i = 0; i < free_count; ++i) {
    const std::size_t b = order[i];
    f[b] = std::max(epsilon, f[b] * scale);
  }
  return f;
}

/// Exact constrained M-step. A component with zero total responsibility gets
/// weight 0 and a uniform density so annihilation can remove it.
inline MixtureModel m_step(const Corpus& corpus, const Responsibilities& resp, double epsilon) {
  const std::size_t L = corpus.num_docs();
  const std::size_t K = resp.num_components();
  const std::size_t B = corpus.vocab_size();
  if (resp.num_docs() != L) throw ShapeError("responsibilities do not match corpus size");

  std::vector<double> mass(K, 0.0);
  std::vector<double> weighted(K * B, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    auto row = resp.row(l);
    const auto& counts = corpus.doc(l).counts;
    for (std::size_t k = 0; k < K; ++k) {
      const double r = row[k];
      if (r == 0.0) continue;
      mass[k] += r;
      double* w = &weighted[k * B];
      for (const auto& wc : counts) w[wc.word] += r * static_cast<double>(wc.count);
    }
  }
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  if (!(total > 0.0)) throw DegenerateFitError("all responsibilities are zero");

  std::vector<double> pi(K), log_f;
  log_f.reserve(K * B);
  for (std::size_t k = 0; k < K; ++k) {
    pi[k] = mass[k] / total;
    std::vector<double> f = mass[k] > 0.0
                                ? water_fill_project(std::span<const double>(weighted).subspan(k * B, B), epsilon)
                                : std::vector<double>(B, 1.0 / static_cast<double>(B));
    for (double v : f) log_f.push_back(std::log(v));
  }
  return MixtureModel(std::move(pi), std::move(log_f), B, epsilon);
}

struct EmConfig {
  std::size_t n_starts = 15;
  std::size_t short_iters = 10;
  std::size_t max_iters = 500;
  double rel_tol = 1e-6;
  double annihilation_divisor = 100.0;
  std::uint64_t rng_seed = 0;
  std::optional<double> epsilon;  // nullopt: 1/n
  std::size_t threads = 1;

  void validate() const {
    if (n_starts < 1) throw DomainError("n_starts must be >= 1");
    if (!(rel_tol > 0.0)) throw DomainError("rel_tol must be positive");
    if (!(annihilation_divisor > 0.0)) throw DomainError("annihilation_divisor must be positive");
  }

  double floor_for(const Corpus& corpus) const { return epsilon ? *epsilon : default_epsilon(corpus.total_tokens()); }
};

struct AnnihilationEvent {
  std::size_t iteration = 0;
  std::vector<std::size_t> removed;  // indices in the model before removal
};

struct FitResult {
  MixtureModel model;
  std::vector<double> loglik_trace;
  std::vector<std::size_t> segment_starts{0};  // trace indices where a new EM segment begins
  std::size_t k_initial = 0;
  std::size_t k_final = 0;
  std::vector<AnnihilationEvent> annihilation_events;
  std::uint64_t seed = 0;
  bool converged = false;
  double eta_effective = 0.0;
  std::size_t iterations = 0;

  double loglik() const { return loglik_trace.back(); }
};

namespace detail {

inline FitResult iterate_em(const Corpus& corpus, MixtureModel model, std::size_t max_iters, double rel_tol,
                            std::size_t threads, std::size_t iteration_offset) {
  const double epsilon = model.epsilon();
  FitResult fit;
  fit.k_initial = model.num_components();
  auto est = e_step(corpus, model, threads);
  if (!std::isfinite(est.loglik)) throw NumericalError(iteration_offset, "non-finite log-likelihood");
  fit.loglik_trace.push_back(est.loglik);
  for (std::size_t it = 1; it <= max_iters; ++it) {
    model = m_step(corpus, est.resp, epsilon);
    est = e_step(corpus, model, threads);
    if (!std::isfinite(est.loglik)) throw NumericalError(iteration_offset + it, "non-finite log-likelihood");
    const double prev = fit.loglik_trace.back();
    fit.loglik_trace.push_back(est.loglik);
    fit.iterations = it;
    fit.eta_effective = (est.loglik - prev) / std::abs(prev);
    if (fit.eta_effective < rel_tol) {
      fit.converged = true;
      break;
    }
  }
  fit.k_final = model.num_components();
  fit.model = std::move(model);
  return fit;
}

}  // namespace detail

/// EM from `init` until the relative log-likelihood gain drops below
/// config.rel_tol or config.max_iters iterations have run.
inline FitResult run_em(const Corpus& corpus, const MixtureModel& init, const EmConfig& config) {
  config.validate();
  auto fit = detail::iterate_em(corpus, init, config.max_iters, config.rel_tol, config.threads, 0);
  fit.seed = config.rng_seed;
  return fit;
}

/// Random starting point: weights from normalized exponential draws, each
/// density the corpus word distribution under multiplicative exponential
/// noise, projected onto the floor-constrained simplex.
inline MixtureModel random_init(const Corpus& corpus, std::size_t K, double epsilon, Rng& rng) {
  if (K < 1) throw DomainError("K must be >= 1");
  const std::size_t B = corpus.vocab_size();
  std::vector<double> empirical(B, 0.0);
  for (const auto& d : corpus.docs()) {
    for (const auto& wc : d.counts) empirical[wc.word] += static_cast<double>(wc.count);
  }
  std::vector<double> pi(K);
  for (auto& p : pi) p = rng.exponential();
  const double s = std::accumulate(pi.begin(), pi.end(), 0.0);
  for (auto& p : pi) p /= s;
  std::vector<double> log_f;
  log_f.reserve(K * B);
  std::vector<double> noisy(B);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t b = 0; b < B; ++b) noisy[b] = empirical[b] * rng.exponential();
    for (double v : water_fill_project(noisy, epsilon)) log_f.push_back(std::log(v));
  }
  return MixtureModel(std::move(pi), std::move(log_f), B, epsilon);
}

/// Random initialization followed by exactly `short_iters` EM iterations.
inline FitResult short_em(const Corpus& corpus, std::size_t K, std::uint64_t seed, std::size_t short_iters,
                          const EmConfig& config = {}) {
  Rng rng(seed);
  auto init = random_init(corpus, K, config.floor_for(corpus), rng);
  auto fit = detail::iterate_em(corpus, std::move(init), short_iters, -std::numeric_limits<double>::infinity(),
                                config.threads, 0);
  fit.seed = seed;
  return fit;
}

/// Components whose weight is below 1 / (divisor * K).
inline std::vector<std::size_t> below_threshold(const MixtureModel& m, double divisor) {
  const double threshold = 1.0 / (divisor * static_cast<double>(m.num_components()));
  std::vector<std::size_t> below;
  for (std::size_t k = 0; k < m.num_components(); ++k) {
    if (m.weight(k) < threshold) below.push_back(k);
  }
  return below;
}

struct AnnihilationStep {
  MixtureModel model;
  std::vector<std::size_t> removed;
};

/// Removes every sub-threshold component in one sweep and renormalizes the
/// surviving weights. Returns the model unchanged when nothing is removed.
inline AnnihilationStep annihilate(const MixtureModel& m, double divisor) {
  auto below = below_threshold(m, divisor);
  if (below.empty()) return {m, {}};
  if (below.size() == m.num_components()) throw DegenerateFitError("every component fell below threshold");
  std::vector<std::size_t> keep;
  for (std::size_t k = 0, j = 0; k < m.num_components(); ++k) {
    if (j < below.size() && below[j] == k) {
      ++j;
    } else {
      keep.push_back(k);
    }
  }
  return {m.select_components(keep), std::move(below)};
}

/// Multi-start short EM at K = k_max, then long EM from the best start,
/// removing every component whose weight falls below
/// 1 / (annihilation_divisor * k_current) and continuing from the survivors
/// until a run ends with no component under the threshold.
inline FitResult robust_em(const Corpus& corpus, std::size_t k_max, const EmConfig& config) {
  config.validate();
  if (k_max < 1) throw DomainError("k_max must be >= 1");

  std::vector<std::optional<FitResult>> starts(config.n_starts);
  EmConfig inner = config;
  inner.threads = 1;
  parallel_for(config.n_starts, config.threads, [&](std::size_t i) {
    starts[i] = short_em(corpus, k_max, config.rng_seed + i, config.short_iters, inner);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < starts.size(); ++i) {
    if (starts[i]->loglik() > starts[best]->loglik()) best = i;
  }

  FitResult out;
  out.seed = config.rng_seed;
  out.k_initial = k_max;
  out.loglik_trace = starts[best]->loglik_trace;
  out.iterations = starts[best]->iterations;
  MixtureModel model = std::move(starts[best]->model);
  starts.clear();

  bool fresh_segment = false;
  for (;;) {
    auto step = annihilate(model, config.annihilation_divisor);
    if (!step.removed.empty()) {
      model = std::move(step.model);
      out.annihilation_events.push_back({out.iterations, std::move(step.removed)});
      fresh_segment = true;
    }
    auto fit = detail::iterate_em(corpus, std::move(model), config.max_iters, config.rel_tol, config.threads,
                                  out.iterations);
    if (fresh_segment) {
      out.segment_starts.push_back(out.loglik_trace.size());
      out.loglik_trace.insert(out.loglik_trace.end(), fit.loglik_trace.begin(), fit.loglik_trace.end());
    } else {
      // The first value repeats the last one already recorded.
      out.loglik_trace.insert(out.loglik_trace.end(), fit.loglik_trace.begin() + 1, fit.loglik_trace.end());
    }
    fresh_segment = false;
    out.iterations += fit.iterations;
    out.converged = fit.converged;
    out.eta_effective = fit.eta_effective;
    model = std::move(fit.model);
    if (below_threshold(model, config.annihilation_divisor).empty()) break;
  }
  out.k_final = model.num_components();
  out.model = std::move(model);
  return out;
}

inline nlohmann::json em_config_to_json(const EmConfig& c) {
  nlohmann::json j = {{"n_starts", c.n_starts},   {"short_iters", c.short_iters},
                      {"max_iters", c.max_iters}, {"rel_tol", c.rel_tol},
                      {"annihilation_divisor", c.annihilation_divisor}, {"rng_seed", c.rng_seed}};
  j["epsilon"] = c.epsilon ? nlohmann::json(*c.epsilon) : nlohmann::json("1/n");
  return j;
}

/// Run log: trace, segments, annihilation events, seed and config echo.
inline nlohmann::json fit_log_to_json(const FitResult& fit, const EmConfig& config) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : fit.annihilation_events) events.push_back({{"iteration", e.iteration}, {"removed", e.removed}});
  return {{"format", "catmix-fit-log"},
          {"format_version", 1},
          {"seed", fit.seed},
          {"k_initial", fit.k_initial},
          {"k_final", fit.k_final},
          {"converged", fit.converged},
          {"eta_effective", fit.eta_effective},
          {"iterations", fit.iterations},
          {"loglik_trace", fit.loglik_trace},
          {"segment_starts", fit.segment_starts},
          {"annihilation_events", events},
          {"config", em_config_to_json(config)}};
}

}  // namespace catmix
