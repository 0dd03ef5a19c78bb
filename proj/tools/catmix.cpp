// Command-line driver: ingest -> sweep -> select -> report, plus synthetic
// experiments.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "catmix/catmix.hpp"

namespace {

std::optional<double> parse_epsilon(const std::string& s) {
  if (s == "1/n") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && v > 0.0) return v;
  } catch (const std::exception&) {
  }
  throw catmix::UsageError("--epsilon expects '1/n' or a positive number, got '" + s + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"catmix: multinomial mixture clustering with penalized model selection"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("--seed", seed, "Base random seed")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads")->capture_default_str();

  catmix::IngestOptions ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Parse and prune a UCI bag-of-words corpus");
  ingest_cmd->add_option("--docword", ingest.docword, "docword.txt")->required();
  ingest_cmd->add_option("--vocab", ingest.vocab, "vocab.txt")->required();
  ingest_cmd->add_option("--metadata", ingest.metadata, "doc_id,year CSV sidecar");
  ingest_cmd->add_option("--max-doc-fraction", ingest.max_doc_fraction)->capture_default_str();
  ingest_cmd->add_option("--top-b", ingest.top_b)->capture_default_str();
  ingest_cmd->add_option("-o,--out", ingest.out, "Output corpus (JSON)")->required();

  catmix::SweepOptions sweep;
  std::size_t kmax = 0;
  std::string epsilon = "1/n";
  auto* sweep_cmd = app.add_subcommand("sweep", "Fit robust EM over a ladder of k_max values");
  sweep_cmd->add_option("--corpus", sweep.corpus)->required();
  sweep_cmd->add_option("--kmax", kmax, "Ladder 1..kmax");
  sweep_cmd->add_option("--ladder", sweep.ladder, "Explicit ladder of k_max values")->delimiter(',');
  sweep_cmd->add_option("--starts", sweep.em.n_starts)->capture_default_str();
  sweep_cmd->add_option("--short-iters", sweep.em.short_iters)->capture_default_str();
  sweep_cmd->add_option("--max-iters", sweep.em.max_iters)->capture_default_str();
  sweep_cmd->add_option("--rel-tol", sweep.em.rel_tol)->capture_default_str();
  sweep_cmd->add_option("--epsilon", epsilon, "Density floor: 1/n or a value")->capture_default_str();
  sweep_cmd->add_option("-o,--out", sweep.out_csv, "Sweep CSV")->required();
  sweep_cmd->add_option("--artifacts", sweep.artifacts_dir, "Directory for models and run logs");

  catmix::SelectOptions select;
  std::string mode = "slope";
  auto* select_cmd = app.add_subcommand("select", "Select K from a sweep table");
  select_cmd->add_option("--sweep", select.sweep_csv)->required();
  select_cmd->add_option("--mode", mode, "slope, theoretical, aic or bic")->capture_default_str();
  select_cmd->add_option("--lambda0", select.lambda0, "Constant for the theoretical penalty");
  select_cmd->add_option("--multiplier", select.multiplier, "Slope multiplier")->capture_default_str();
  select_cmd->add_option("-o,--out", select.out, "Selection report (JSON)")->required();

  catmix::ReportOptions report;
  auto* report_cmd = app.add_subcommand("report", "Top words, yearly evolution and assignments");
  report_cmd->add_option("--corpus", report.corpus)->required();
  report_cmd->add_option("--model", report.model)->required();
  report_cmd->add_option("--metadata", report.metadata, "doc_id,year CSV sidecar");
  report_cmd->add_option("--top", report.top_m)->capture_default_str();
  report_cmd->add_option("-o,--out-dir", report.out_dir)->required();

  catmix::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Planted-mixture experiment from a JSON config");
  synth_cmd->add_option("--config", synth.config)->required();
  synth_cmd->add_option("-o,--out-dir", synth.out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? catmix::kExitOk : catmix::kExitUsage;
  }

  if (*ingest_cmd) return catmix::cmd_ingest(ingest);
  if (*sweep_cmd) {
    return catmix::guarded(std::cerr, [&] {
      if (kmax > 0) {
        for (std::size_t k = 1; k <= kmax; ++k) sweep.ladder.push_back(k);
      }
      if (sweep.ladder.empty()) throw catmix::UsageError("give --kmax or --ladder");
      sweep.em.epsilon = parse_epsilon(epsilon);
      sweep.em.rng_seed = seed;
      sweep.em.threads = threads;
      return catmix::cmd_sweep(sweep);
    });
  }
  if (*select_cmd) {
    return catmix::guarded(std::cerr, [&] {
      select.mode = catmix::parse_select_mode(mode);
      return catmix::cmd_select(select);
    });
  }
  if (*report_cmd) return catmix::cmd_report(report);
  if (*synth_cmd) {
    synth.base_seed = seed;
    synth.threads = threads;
    return catmix::cmd_synth(synth);
  }
  return catmix::kExitUsage;
}
