#pragma once

// Pipeline commands behind the `catmix` executable: ingest, sweep, select,
// report and synth. Each returns a process exit code.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "catmix/corpus.hpp"
#include "catmix/em.hpp"
#include "catmix/errors.hpp"
#include "catmix/mixture.hpp"
#include "catmix/random.hpp"
#include "catmix/report.hpp"
#include "catmix/selection.hpp"
#include "catmix/synth.hpp"

namespace catmix {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

class UsageError : public Error {
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error("config field '" + field + "': " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Runs `body`, mapping library errors to exit codes and printing them to `err`.
inline int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DegenerateFitError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DegenerateRegressionError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

struct IngestOptions {
  std::filesystem::path docword;
  std::filesystem::path vocab;
  std::optional<std::filesystem::path> metadata;
  double max_doc_fraction = 0.8;
  std::size_t top_b = 300;
  std::filesystem::path out;
};

inline int cmd_ingest(const IngestOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    auto docword = open_input(opt.docword);
    auto vocab = open_input(opt.vocab);
    auto raw = parse_bag_of_words(docword, vocab);
    log << "parsed " << raw.num_docs() << " documents, " << raw.vocab_size() << " words, " << raw.total_tokens()
        << " tokens\n";
    if (opt.metadata) {
      auto meta = open_input(*opt.metadata);
      raw = raw.with_years(parse_year_table(meta));
    }
    auto pruned = prune_vocabulary(raw, opt.max_doc_fraction, opt.top_b);
    log << "kept " << pruned.num_docs() << " documents, " << pruned.vocab_size() << " words, " << pruned.total_tokens()
        << " tokens; dropped " << pruned.dropped_ids().size() << " empty documents\n";
    atomic_write_with(opt.out, [&](std::ostream& o) { save_corpus(pruned, o); });
    return kExitOk;
  });
}

inline Corpus read_corpus_file(const std::filesystem::path& p) {
  auto in = open_input(p);
  return load_corpus(in);
}

struct SweepOptions {
  std::filesystem::path corpus;
  std::vector<std::size_t> ladder;
  EmConfig em;
  std::filesystem::path out_csv;
  std::optional<std::filesystem::path> artifacts_dir;
};

inline void write_sweep_artifacts(const SweepResult& sweep, const EmConfig& em, const std::filesystem::path& dir) {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : sweep.failures) failures.push_back({{"k_max", f.k_max}, {"message", f.message}});
  nlohmann::json fits = nlohmann::json::array();
  for (const auto& r : sweep.records) {
    if (!r.fit) continue;
    const auto name = "model_K" + std::to_string(r.K) + ".json";
    atomic_write_with(dir / name, [&](std::ostream& o) { save_model(r.fit->model, o); });
    atomic_write(dir / ("fit_K" + std::to_string(r.K) + ".json"), fit_log_to_json(*r.fit, em).dump(1) + "\n");
    fits.push_back({{"K", r.K}, {"k_initial", r.fit->k_initial}, {"model", name}});
  }
  nlohmann::json log = {{"format", "catmix-sweep-log"}, {"format_version", 1}, {"fits", fits}, {"failures", failures},
                        {"config", em_config_to_json(em)}};
  atomic_write(dir / "sweep_log.json", log.dump(1) + "\n");
}

inline int cmd_sweep(const SweepOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    if (opt.ladder.empty()) throw UsageError("the k ladder is empty");
    auto corpus = read_corpus_file(opt.corpus);
    auto sweep = run_sweep(corpus, opt.ladder, opt.em);
    for (const auto& f : sweep.failures) err << "fit at k_max=" << f.k_max << " failed: " << f.message << '\n';
    log << "swept " << opt.ladder.size() << " ladder entries into " << sweep.records.size() << " distinct K values\n";
    atomic_write_with(opt.out_csv, [&](std::ostream& o) { write_sweep_csv(sweep, o); });
    if (opt.artifacts_dir) write_sweep_artifacts(sweep, opt.em, *opt.artifacts_dir);
    return kExitOk;
  });
}

enum class SelectMode { kSlope, kTheoretical, kAic, kBic };

inline SelectMode parse_select_mode(const std::string& s) {
  if (s == "slope") return SelectMode::kSlope;
  if (s == "theoretical") return SelectMode::kTheoretical;
  if (s == "aic") return SelectMode::kAic;
  if (s == "bic") return SelectMode::kBic;
  throw UsageError("unknown mode '" + s + "' (expected slope, theoretical, aic or bic)");
}

inline SelectionReport select_by_mode(const SweepResult& sweep, SelectMode mode, std::optional<double> lambda0,
                                      double multiplier) {
  switch (mode) {
    case SelectMode::kSlope:
      return select_slope(sweep, multiplier);
    case SelectMode::kTheoretical:
      return select_theoretical(sweep, lambda0, multiplier);
    case SelectMode::kAic:
      return select_information(sweep, false);
    case SelectMode::kBic:
      return select_information(sweep, true);
  }
  throw UsageError("unknown selection mode");
}

struct SelectOptions {
  std::filesystem::path sweep_csv;
  SelectMode mode = SelectMode::kSlope;
  std::optional<double> lambda0;
  double multiplier = 2.0;
  std::filesystem::path out;
};

inline int cmd_select(const SelectOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    auto in = open_input(opt.sweep_csv);
    auto sweep = read_sweep_csv(in);
    SelectionReport rep;
    try {
      rep = select_by_mode(sweep, opt.mode, opt.lambda0, opt.multiplier);
    } catch (const InsufficientDataError& e) {
      throw InsufficientDataError(std::string(e.what()) + "; add more entries to the sweep ladder");
    }
    log << "K_hat = " << rep.K_hat;
    if (rep.lambda_min) log << ", lambda_min = " << *rep.lambda_min;
    log << '\n';
    atomic_write(opt.out, selection_to_json(rep).dump(1) + "\n");
    return kExitOk;
  });
}

struct ReportOptions {
  std::filesystem::path corpus;
  std::filesystem::path model;
  std::optional<std::filesystem::path> metadata;
  std::size_t top_m = 12;
  std::filesystem::path out_dir;
};

inline int cmd_report(const ReportOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    auto corpus = read_corpus_file(opt.corpus);
    auto model_in = open_input(opt.model);
    auto model = load_model(model_in);
    YearTable years = corpus.years();
    if (opt.metadata) {
      auto meta = open_input(*opt.metadata);
      years = parse_year_table(meta);
    }
    auto rep = build_topic_report(corpus, model, opt.top_m, years);
    if (!years.empty() && rep.docs_without_year > 0) {
      log << rep.docs_without_year << " documents have no year and are excluded from the evolution table\n";
    }
    atomic_write_with(opt.out_dir / "top_words.csv", [&](std::ostream& o) { write_top_words_csv(rep, o); });
    atomic_write_with(opt.out_dir / "evolution.csv", [&](std::ostream& o) { write_evolution_csv(rep, o); });
    atomic_write_with(opt.out_dir / "assignments.csv", [&](std::ostream& o) { write_assignments_csv(rep, o); });
    log << "wrote report for " << model.num_components() << " clusters to " << opt.out_dir.string() << '\n';
    return kExitOk;
  });
}

/// Synthetic experiment design, read from JSON with `schema_version` 1.
struct SynthConfig {
  std::size_t K_true = 3;
  std::size_t B = 20;
  std::size_t L = 200;
  LengthLaw lengths{50, 200};
  double separation_target = 0.5;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> ladder;
  EmConfig em;
  SelectMode mode = SelectMode::kSlope;
};

inline SynthConfig parse_synth_config(const nlohmann::json& j) {
  auto field = [&](const char* name) -> const nlohmann::json& {
    if (!j.contains(name)) throw ConfigError(name, "missing");
    return j.at(name);
  };
  auto get = [&]<typename T>(const char* name, T& dst) {
    try {
      dst = field(name).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(name, e.what());
    }
  };
  if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
  int version = 0;
  get("schema_version", version);
  if (version != 1) throw ConfigError("schema_version", "unsupported version " + std::to_string(version));
  SynthConfig c;
  get("K_true", c.K_true);
  get("B", c.B);
  get("L", c.L);
  get("length_min", c.lengths.min);
  get("length_max", c.lengths.max);
  get("separation_target", c.separation_target);
  get("seeds", c.seeds);
  get("ladder", c.ladder);
  if (c.K_true < 1) throw ConfigError("K_true", "must be >= 1");
  if (c.B < 1) throw ConfigError("B", "must be >= 1");
  if (c.L < 1) throw ConfigError("L", "must be >= 1");
  if (c.lengths.min < 1 || c.lengths.max < c.lengths.min) throw ConfigError("length_min", "need 1 <= min <= max");
  if (c.ladder.empty()) throw ConfigError("ladder", "must be nonempty");
  if (j.contains("mode")) {
    try {
      c.mode = parse_select_mode(j.at("mode").get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError("mode", e.what());
    }
  }
  if (j.contains("em")) {
    const auto& em = j.at("em");
    try {
      if (em.contains("n_starts")) c.em.n_starts = em.at("n_starts").get<std::size_t>();
      if (em.contains("short_iters")) c.em.short_iters = em.at("short_iters").get<std::size_t>();
      if (em.contains("max_iters")) c.em.max_iters = em.at("max_iters").get<std::size_t>();
      if (em.contains("rel_tol")) c.em.rel_tol = em.at("rel_tol").get<double>();
      if (em.contains("annihilation_divisor")) c.em.annihilation_divisor = em.at("annihilation_divisor").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("em", e.what());
    }
  }
  try {
    c.em.validate();
  } catch (const Error& e) {
    throw ConfigError("em", e.what());
  }
  return c;
}

struct SynthRow {
  std::uint64_t seed = 0;
  std::size_t K_hat = 0;
  double risk = 0.0;
  double agreement = 0.0;
  std::optional<double> lambda_min;
};

struct SynthInstance {
  PlantedCorpus planted;
  EmConfig em;
};

/// Planted corpus and EM configuration for one seed of the design.
inline SynthInstance make_synth_instance(const SynthConfig& cfg, std::uint64_t seed, std::uint64_t base_seed = 0) {
  const std::uint64_t root = derive_seed(base_seed, seed);
  auto mix = make_planted_mixture(cfg.K_true, cfg.B, cfg.separation_target, derive_seed(root, 0));
  SynthInstance inst{generate_corpus(mix, cfg.L, cfg.lengths, derive_seed(root, 1)), cfg.em};
  inst.em.rng_seed = derive_seed(root, 2);
  return inst;
}

/// One seed of generate -> sweep -> select -> evaluate. `base_seed` is mixed
/// into every derived seed.
inline SynthRow run_synth_seed(const SynthConfig& cfg, std::uint64_t seed, std::uint64_t base_seed = 0) {
  auto [planted, em] = make_synth_instance(cfg, seed, base_seed);
  auto sweep = run_sweep(planted.corpus, cfg.ladder, em);
  auto rep = select_by_mode(sweep, cfg.mode, std::nullopt, 2.0);
  const auto& chosen = *std::find_if(sweep.records.begin(), sweep.records.end(),
                                     [&](const SweepRecord& r) { return r.K == rep.K_hat; });
  auto ev = evaluate_run(planted, *chosen.fit);
  return {seed, rep.K_hat, ev.risk, ev.agreement, rep.lambda_min};
}

inline void write_synth_csv(const std::vector<SynthRow>& rows, std::ostream& out) {
  std::ostringstream s;
  s.precision(17);
  s << "# synthetic planted-mixture design\n";
  s << "seed,K_hat,risk,agreement\n";
  for (const auto& r : rows) s << r.seed << ',' << r.K_hat << ',' << r.risk << ',' << r.agreement << '\n';
  out << s.str();
}

struct SynthOptions {
  std::filesystem::path config;
  std::filesystem::path out_dir;
  std::uint64_t base_seed = 0;
  std::size_t threads = 1;
};

inline int cmd_synth(const SynthOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    auto in = open_input(opt.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("config: ") + e.what());
    }
    auto cfg = parse_synth_config(j);
    std::vector<SynthRow> rows(cfg.seeds.size());
    parallel_for(cfg.seeds.size(), opt.threads,
                 [&](std::size_t i) { rows[i] = run_synth_seed(cfg, cfg.seeds[i], opt.base_seed); });
    for (const auto& r : rows) log << "seed " << r.seed << ": K_hat=" << r.K_hat << " agreement=" << r.agreement << '\n';
    atomic_write_with(opt.out_dir / "synth_summary.csv", [&](std::ostream& o) { write_synth_csv(rows, o); });
    return kExitOk;
  });
}

}  // namespace catmix
