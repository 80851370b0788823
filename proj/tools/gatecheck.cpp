// gatecheck: command-line front end for the confidence-gate experiments.
//
//   gatecheck claims --out results/
//   gatecheck diagnose stream.csv --mode accuracy --bins 5
//   gatecheck synth --spec data/synthetic/contextual.spec --format json

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gatecheck/error.hpp"
#include "gatecheck/experiments.hpp"

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "text";
  std::vector<std::string> splits;
};

gatecheck::ExperimentConfig resolve_config(const GlobalOptions& g) {
  auto config = g.config.empty() ? gatecheck::ExperimentConfig{} : gatecheck::load_config(g.config);
  if (g.seed) config.reseed(*g.seed);
  if (!g.out.empty()) config.output_dir = g.out;
  if (!g.splits.empty()) {
    config.splits.clear();
    for (const auto& s : g.splits) config.splits.push_back(gatecheck::parse_split_kind(s));
  }
  config.blocks.fractions = config.fractions;
  return config;
}

int emit(const gatecheck::Report& report, const GlobalOptions& g) {
  gatecheck::print_report(std::cout, report, gatecheck::parse_format(g.format));
  if (!g.out.empty()) gatecheck::write_report(g.out, report);
  for (const auto& f : report.invariant_failures) std::cerr << "invariant failed: " << f << '\n';
  return report.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence-gate diagnostics and MovieLens experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Replace every seed in the config with ones derived from this value");
  app.add_option("--out", g.out, "Directory for the JSON report, CSV sidecars and artifacts");
  app.add_option("--format", g.format, "Format written to stdout")
      ->check(CLI::IsMember({"json", "csv", "text"}));
  app.footer(
      "Environment: GATECHECK_DATA_DIR overrides the default data directory "
      "(expects ml-100k/u.data and synthetic/*.spec).");

  const auto with_splits = [&](CLI::App* sub) {
    sub->add_option("--split", g.splits, "Split kinds to run (temporal, cold_user, cold_item); repeatable");
    return sub;
  };

  auto* ingest = app.add_subcommand("ingest", "Load and summarise the rating file");
  auto* split = with_splits(app.add_subcommand("split", "Build splits, check invariants, write them with --out"));
  auto* fit = with_splits(app.add_subcommand("fit", "Fit ALS and baselines; save models with --out"));
  auto* confidence = with_splits(app.add_subcommand("confidence", "Score test cases with every configured signal"));
  auto* curve = with_splits(app.add_subcommand("curve", "Selective RMSE abstention curves per signal"));
  auto* exceptions = with_splits(app.add_subcommand("exceptions", "Residual shift, exception AUC and FP/FN ratios"));
  auto* adaptive = app.add_subcommand("adaptive", "Sliding-window recalibration block experiment");
  auto* claims = with_splits(app.add_subcommand("claims", "Full claim suite with expected-value bands"));

  std::size_t blocks = 0;
  adaptive->add_option("--blocks", blocks, "Number of sequential test blocks (default from config)");

  auto* diagnose = app.add_subcommand("diagnose", "Check C1, C2, ECE and tiers on a confidence,outcome CSV");
  std::string stream;
  std::string mode = "accuracy";
  std::size_t bins = 5;
  diagnose->add_option("stream", stream, "CSV with header confidence,outcome[,tier]")
      ->required()
      ->check(CLI::ExistingFile);
  diagnose->add_option("--mode", mode, "accuracy (0/1 outcomes) or regression (outcome is a loss)")
      ->check(CLI::IsMember({"accuracy", "regression"}));
  diagnose->add_option("--bins", bins, "Equal-width confidence zones")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Seed sweep over a synthetic world spec");
  std::string spec_path;
  synth->add_option("--spec", spec_path, "World spec (key = value); default <data dir>/synthetic/structural.spec");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version are reported as parse "errors" with code 0.
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (ingest->parsed()) return emit(gatecheck::run_ingest(resolve_config(g)), g);
    if (split->parsed()) return emit(gatecheck::run_split(resolve_config(g)), g);
    if (fit->parsed()) return emit(gatecheck::run_fit(resolve_config(g)), g);
    if (confidence->parsed()) return emit(gatecheck::run_confidence(resolve_config(g)), g);
    if (curve->parsed()) return emit(gatecheck::run_curve(resolve_config(g)), g);
    if (exceptions->parsed()) return emit(gatecheck::run_exceptions(resolve_config(g)), g);
    if (claims->parsed()) return emit(gatecheck::run_claims(resolve_config(g)), g);
    if (adaptive->parsed()) {
      auto config = resolve_config(g);
      if (blocks > 0) config.blocks.n_blocks = blocks;
      return emit(gatecheck::run_adaptive(config), g);
    }
    if (diagnose->parsed()) {
      gatecheck::DiagnoseOptions options;
      options.mode = gatecheck::parse_diagnose_mode(mode);
      options.bins = bins;
      if (!g.config.empty()) options.c1 = resolve_config(g).c1;
      return emit(gatecheck::run_diagnose(stream, options), g);
    }
    if (synth->parsed()) {
      const auto config = resolve_config(g);
      std::filesystem::path path = spec_path;
      if (path.empty()) {
        path = config.synthetic_spec.empty() ? gatecheck::default_data_dir() / "synthetic" / "structural.spec"
                                             : std::filesystem::path(config.synthetic_spec);
      }
      auto spec = gatecheck::load_world_spec(path);
      if (g.seed) spec.seed = *g.seed;
      return emit(gatecheck::run_synth(spec, config.fractions), g);
    }
  } catch (const gatecheck::Error& e) {
    std::cerr << "gatecheck: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "gatecheck: unexpected error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
