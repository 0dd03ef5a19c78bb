#pragma once

// Floor-constrained multinomial mixtures: log-space likelihoods, MAP
// assignment and categorical KL divergences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "catmix/corpus.hpp"
#include "catmix/errors.hpp"

namespace catmix {

namespace detail {
inline bool& warnings_enabled() {
  static bool enabled = true;
  return enabled;
}
inline void warn(const std::string& msg) {
  if (warnings_enabled()) std::clog << "catmix warning: " << msg << '\n';
}
}  // namespace detail

/// Globally silences library warnings (identifiability notices).
inline void set_warnings_enabled(bool on) { detail::warnings_enabled() = on; }

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// K categorical densities over B words with weights on the simplex.
/// Every density entry is at least `epsilon`; densities are kept as logs.
class MixtureModel {
 public:
  MixtureModel() = default;

  /// Takes ownership of weights and a row-major K x B log-density matrix and
  /// validates the simplex and floor invariants.
  MixtureModel(std::vector<double> pi, std::vector<double> log_f, std::size_t vocab_size, double epsilon)
      : K_(pi.size()), B_(vocab_size), epsilon_(epsilon), pi_(std::move(pi)), log_f_(std::move(log_f)) {
    validate();
    if (B_ + 1 < 2 * K_) {
      detail::warn("B=" + std::to_string(B_) + " < 2K-1=" + std::to_string(2 * K_ - 1) +
                   ": mixture may not be identifiable");
    }
  }

  /// Builds from probability rows; rows are not re-projected.
  static MixtureModel from_densities(std::vector<double> pi, const std::vector<std::vector<double>>& densities,
                                     double epsilon) {
    if (densities.size() != pi.size()) throw ShapeError("weights and densities disagree on K");
    const std::size_t B = densities.empty() ? 0 : densities.front().size();
    std::vector<double> log_f;
    log_f.reserve(pi.size() * B);
    for (const auto& row : densities) {
      if (row.size() != B) throw ShapeError("ragged density rows");
      for (double p : row) log_f.push_back(std::log(p));
    }
    return MixtureModel(std::move(pi), std::move(log_f), B, epsilon);
  }

  std::size_t num_components() const noexcept { return K_; }
  std::size_t vocab_size() const noexcept { return B_; }
  double epsilon() const noexcept { return epsilon_; }
  double tau() const noexcept { return -std::log(epsilon_); }

  const std::vector<double>& weights() const noexcept { return pi_; }
  double weight(std::size_t k) const { return pi_.at(k); }

  std::span<const double> log_density(std::size_t k) const {
    return std::span<const double>(log_f_).subspan(k * B_, B_);
  }
  const std::vector<double>& log_densities() const noexcept { return log_f_; }

  std::vector<double> density(std::size_t k) const {
    std::vector<double> out(B_);
    auto row = log_density(k);
    std::transform(row.begin(), row.end(), out.begin(), [](double v) { return std::exp(v); });
    return out;
  }

  /// Model restricted to `keep` (in that order) with weights renormalized.
  MixtureModel select_components(std::span<const std::size_t> keep) const {
    std::vector<double> pi, log_f;
    double total = 0.0;
    for (auto k : keep) total += pi_.at(k);
    if (!(total > 0.0)) throw DegenerateFitError("retained components carry zero weight");
    for (auto k : keep) {
      pi.push_back(pi_[k]);
      auto row = log_density(k);
      log_f.insert(log_f.end(), row.begin(), row.end());
    }
    renormalize(pi);
    return MixtureModel(std::move(pi), std::move(log_f), B_, epsilon_);
  }

  /// Components reordered so that new component i is old component perm[i].
  MixtureModel permuted(std::span<const std::size_t> perm) const {
    if (perm.size() != K_) throw ShapeError("permutation length differs from K");
    std::vector<double> pi, log_f;
    for (auto k : perm) {
      pi.push_back(pi_.at(k));
      auto row = log_density(k);
      log_f.insert(log_f.end(), row.begin(), row.end());
    }
    return MixtureModel(std::move(pi), std::move(log_f), B_, epsilon_);
  }

  friend bool operator==(const MixtureModel&, const MixtureModel&) = default;

 private:
  static void renormalize(std::vector<double>& pi) {
    double s = 0.0;
    for (double p : pi) s += p;
    for (double& p : pi) p /= s;
  }

  void validate() const {
    if (K_ == 0) throw ShapeError("mixture needs at least one component");
    if (B_ == 0) throw ShapeError("mixture needs a nonempty vocabulary");
    if (log_f_.size() != K_ * B_) throw ShapeError("log-density matrix is not K x B");
    if (!(epsilon_ > 0.0) || static_cast<double>(B_) * epsilon_ > 1.0 + 1e-12) {
      throw DomainError("floor epsilon must satisfy 0 < epsilon <= 1/B");
    }
    double s = 0.0;
    for (double p : pi_) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw ValueError("mixture weights must be finite and nonnegative");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ValueError("mixture weights sum to " + std::to_string(s));
    for (std::size_t k = 0; k < K_; ++k) {
      double row = 0.0;
      for (double lf : log_density(k)) {
        const double f = std::exp(lf);
        if (!(f >= epsilon_ - 1e-15)) {
          throw ValueError("component " + std::to_string(k) + " violates the density floor");
        }
        row += f;
      }
      if (std::abs(row - 1.0) > 1e-10) {
        throw ValueError("component " + std::to_string(k) + " sums to " + std::to_string(row));
      }
    }
  }

  std::size_t K_ = 0;
  std::size_t B_ = 0;
  double epsilon_ = 0.0;
  std::vector<double> pi_;
  std::vector<double> log_f_;
};

/// Default floor 1/n for a corpus of n tokens.
inline double default_epsilon(std::uint64_t total_tokens) { return 1.0 / static_cast<double>(total_tokens); }

/// Per-component joint log terms for one document.
struct DocLogJoint {
  std::vector<double> terms;  // log pi_k + sum_b c_b log f_k(b); -inf when pi_k = 0
  double log_density = kNegInf;
};

namespace detail {

/// log(sum exp(terms)), skipping -inf entries. The exponentials are summed in
/// ascending order so the result does not depend on component order.
inline double log_sum_exp(std::span<const double> terms, std::vector<double>& scratch) {
  double top = kNegInf;
  for (double t : terms) top = std::max(top, t);
  if (top == kNegInf) return kNegInf;
  scratch.clear();
  for (double t : terms) {
    if (t != kNegInf) scratch.push_back(std::exp(t - top));
  }
  std::sort(scratch.begin(), scratch.end());
  double s = 0.0;
  for (double e : scratch) s += e;
  return top + std::log(s);
}

inline void check_shape(const Corpus& corpus, const MixtureModel& model) {
  if (corpus.vocab_size() != model.vocab_size()) {
    throw ShapeError("corpus vocabulary size " + std::to_string(corpus.vocab_size()) +
                     " differs from model size " + std::to_string(model.vocab_size()));
  }
}

}  // namespace detail

inline void doc_log_joint_into(std::span<const WordCount> counts, const MixtureModel& model, DocLogJoint& out,
                               std::vector<double>& scratch) {
  const std::size_t K = model.num_components();
  const std::size_t B = model.vocab_size();
  out.terms.assign(K, 0.0);
  for (const auto& wc : counts) {
    if (wc.word >= B) throw IndexError("word index " + std::to_string(wc.word) + " outside model vocabulary");
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double pk = model.weight(k);
    if (pk <= 0.0) {
      out.terms[k] = kNegInf;
      continue;
    }
    auto row = model.log_density(k);
    double a = 0.0;
    for (const auto& wc : counts) a += static_cast<double>(wc.count) * row[wc.word];
    out.terms[k] = std::log(pk) + a;
  }
  out.log_density = detail::log_sum_exp(out.terms, scratch);
}

inline DocLogJoint doc_log_joint(std::span<const WordCount> counts, const MixtureModel& model) {
  if (counts.empty()) throw ValueError("document has no counts");
  DocLogJoint out;
  std::vector<double> scratch;
  doc_log_joint_into(counts, model, out, scratch);
  return out;
}

/// Sum over documents of log P(x_l), i.e. the negated empirical contrast.
inline double log_likelihood(const Corpus& corpus, const MixtureModel& model) {
  detail::check_shape(corpus, model);
  DocLogJoint joint;
  std::vector<double> scratch;
  double total = 0.0;
  for (const auto& d : corpus.docs()) {
    doc_log_joint_into(d.counts, model, joint, scratch);
    total += joint.log_density;
  }
  return total;
}

using Assignment = std::vector<std::size_t>;

/// MAP component per document; ties go to the lowest index.
inline Assignment map_assign(const Corpus& corpus, const MixtureModel& model) {
  detail::check_shape(corpus, model);
  Assignment labels;
  labels.reserve(corpus.num_docs());
  DocLogJoint joint;
  std::vector<double> scratch;
  for (const auto& d : corpus.docs()) {
    doc_log_joint_into(d.counts, model, joint, scratch);
    labels.push_back(static_cast<std::size_t>(
        std::max_element(joint.terms.begin(), joint.terms.end()) - joint.terms.begin()));
  }
  return labels;
}

/// KL(s || t) = sum_b s_b log(s_b / t_b). Returns nullopt when the divergence
/// is infinite (s_b > 0 where t_b = 0).
inline std::optional<double> kl_categorical(std::span<const double> s, std::span<const double> t) {
  if (s.size() != t.size()) throw ShapeError("KL arguments differ in length");
  double kl = 0.0;
  for (std::size_t b = 0; b < s.size(); ++b) {
    if (s[b] <= 0.0) continue;
    if (t[b] <= 0.0) return std::nullopt;
    kl += s[b] * std::log(s[b] / t[b]);
  }
  return std::max(kl, 0.0);
}

/// sum_l (n_l / n) KL(s_l, f_{label_l}).
inline double weighted_kl_risk(const std::vector<std::vector<double>>& true_densities, const MixtureModel& model,
                               const Assignment& labels, std::span<const std::uint64_t> doc_lengths) {
  const std::size_t L = true_densities.size();
  if (labels.size() != L || doc_lengths.size() != L) throw ShapeError("risk inputs disagree on L");
  std::uint64_t n = 0;
  for (auto len : doc_lengths) n += len;
  std::vector<std::vector<double>> rows(model.num_components());
  for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = model.density(k);
  double risk = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    if (labels[l] >= rows.size()) throw IndexError("label outside [0, K)");
    auto kl = kl_categorical(true_densities[l], rows[labels[l]]);
    if (!kl) throw DivergenceInfiniteError("document " + std::to_string(l) + " has infinite divergence");
    risk += static_cast<double>(doc_lengths[l]) / static_cast<double>(n) * *kl;
  }
  return risk;
}

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json model_to_json(const MixtureModel& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < m.num_components(); ++k) {
    auto r = m.log_density(k);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"format", "catmix-model"}, {"format_version", kModelFormatVersion},
          {"K", m.num_components()},  {"B", m.vocab_size()},
          {"epsilon_n", m.epsilon()}, {"pi", m.weights()},
          {"log_f", rows}};
}

inline MixtureModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "catmix-model") throw FormatError("not a model document");
    if (j.at("format_version").get<int>() != kModelFormatVersion) throw FormatError("unsupported model format version");
    const auto K = j.at("K").get<std::size_t>();
    const auto B = j.at("B").get<std::size_t>();
    auto pi = j.at("pi").get<std::vector<double>>();
    const auto& rows = j.at("log_f");
    if (pi.size() != K || rows.size() != K) throw FormatError("model K does not match stored arrays");
    std::vector<double> log_f;
    for (const auto& r : rows) {
      auto row = r.get<std::vector<double>>();
      if (row.size() != B) throw FormatError("model B does not match stored rows");
      log_f.insert(log_f.end(), row.begin(), row.end());
    }
    return MixtureModel(std::move(pi), std::move(log_f), B, j.at("epsilon_n").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model payload: ") + e.what());
  }
}

inline void save_model(const MixtureModel& m, std::ostream& out) { out << model_to_json(m).dump(1) << '\n'; }

inline MixtureModel load_model(std::istream& in) {
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model payload: ") + e.what());
  }
}

}  // namespace catmix
