#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatecheck/backbone.hpp"
#include "gatecheck/confidence.hpp"
#include "gatecheck/dataset.hpp"
#include "gatecheck/diagnostics.hpp"
#include "gatecheck/exception_lab.hpp"
#include "gatecheck/recalibration.hpp"
#include "gatecheck/report.hpp"
#include "gatecheck/synthetic.hpp"

namespace gatecheck {

inline constexpr int kConfigSchemaVersion = 1;

struct ExperimentConfig {
  // Exactly one source: a MovieLens-format file, or a world spec whose
  // generated ratings are pooled and re-split like real data. Both empty
  // means <data dir>/ml-100k/u.data.
  std::string dataset_path;
  std::string synthetic_spec;

  std::vector<SplitKind> splits = {SplitKind::kTemporal, SplitKind::kColdUser, SplitKind::kColdItem};
  double test_fraction = 0.2;
  std::uint64_t split_seed = 42;

  AlsOptions backbone;

  std::vector<SignalKind> confidence_kinds = {SignalKind::kCountBased,        SignalKind::kRandomControl,
                                              SignalKind::kResidualPredicted, SignalKind::kEnsemble,
                                              SignalKind::kRecency,           SignalKind::kCombinedStructRecency};
  std::vector<std::uint64_t> ensemble_seeds = {42, 43, 44, 45, 46};
  std::uint64_t random_seed = 42;
  LearnedOptions learned;

  std::vector<double> fractions = default_fractions();
  double negligible_step = kNegligibleStep;

  std::size_t c2_bins = 5;
  double accuracy_tolerance = 1.0;
  C1Thresholds c1;

  BlockOptions blocks;

  std::string output_dir;

  // Every seed used by a run, in a fixed order, for the report header.
  std::vector<std::uint64_t> all_seeds() const;
  // Replace every seed with one derived from `seed` (ensemble: seed .. seed+4).
  void reseed(std::uint64_t seed);
};

// Keys not in the schema are rejected with their JSON path.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

// $GATECHECK_DATA_DIR if set, else the directory configured at build time.
std::filesystem::path default_data_dir();
std::vector<RatingRecord> load_ratings(const ExperimentConfig& config);

struct SplitRun {
  SplitDataset split;
  MfModel model;
  std::vector<double> predictions;  // clipped MF predictions on the test set
  std::vector<double> actual;
};

SplitRun prepare_split(const std::vector<RatingRecord>& records, SplitKind kind, const ExperimentConfig& config);

struct SplitSummary {
  SplitKind kind = SplitKind::kTemporal;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double rmse_global = 0.0;
  double rmse_user = 0.0;
  double rmse_item = 0.0;
  double rmse_mf = 0.0;
  double tau = 0.0;
  double train_exception_rate = 0.0;
  double test_exception_rate = 0.0;
  stats::TestResult ks;
  double auc_train = 0.0;
  double auc_test = 0.0;
  std::vector<FpFnRow> fp_fn;
  AbstentionCurve count_curve;
  C1Report c1;
  std::vector<std::string> warnings;
};

SplitSummary summarize_split(const SplitRun& run, const ExperimentConfig& config,
                             std::vector<std::string>& invariant_failures);

struct SignalCurve {
  SignalKind kind = SignalKind::kCountBased;
  std::string scope;  // "all" or "eval_half"
  AbstentionCurve curve;
  std::vector<std::string> warnings;
};

SignalCurve signal_curve(const SplitRun& run, SignalKind kind, const ExperimentConfig& config);

struct ClaimsResult {
  std::vector<SplitSummary> splits;
  std::vector<SignalCurve> temporal_signals;  // configured kinds on the temporal split
  std::vector<std::string> invariant_failures;

  const SplitSummary* split(SplitKind kind) const;
  const SignalCurve* signal(SignalKind kind) const;
};

ClaimsResult compute_claims(const ExperimentConfig& config);

struct BandCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Expected-value bands for the MovieLens run; misses are warnings only.
std::vector<BandCheck> band_checks(const ClaimsResult& result);

Report claims_report(const ClaimsResult& result, const ExperimentConfig& config);
Report run_claims(const ExperimentConfig& config);

Report run_ingest(const ExperimentConfig& config);
Report run_split(const ExperimentConfig& config);
Report run_fit(const ExperimentConfig& config);
Report run_confidence(const ExperimentConfig& config);
Report run_curve(const ExperimentConfig& config);
Report run_exceptions(const ExperimentConfig& config);

struct AdaptiveSummary {
  BlockExperiment experiment;
  std::optional<double> static_mean_at_15;
  std::optional<double> adaptive_mean_at_15;
};

AdaptiveSummary compute_adaptive(const ExperimentConfig& config);
Report run_adaptive(const ExperimentConfig& config);

struct RegimeVerdict {
  bool contextual = false;  // which regime the spec exercises
  bool pass = false;
  std::string line;
  SeedSweep sweep;
  RegimeCheck regime;
};

RegimeVerdict evaluate_regime(const WorldSpec& spec, std::span<const double> fractions);
Report run_synth(const WorldSpec& spec, std::span<const double> fractions);

enum class DiagnoseMode { kAccuracy, kRegression };

DiagnoseMode parse_diagnose_mode(std::string_view name);

struct DiagnoseOptions {
  DiagnoseMode mode = DiagnoseMode::kAccuracy;
  std::size_t bins = 5;
  C1Thresholds c1;
};

inline constexpr const char* kGateSafe = "GATE-SAFE";
inline constexpr const char* kInversionFound = "INVERSION-FOUND";
inline constexpr const char* kSignalDegenerate = "SIGNAL-DEGENERATE";

struct DiagnoseResult {
  std::string verdict;
  std::optional<C1Report> c1;
  std::optional<ZoneReport> zones;
  std::optional<CalibrationReport> calibration;
  std::optional<TierReport> tiers;
  std::vector<std::string> notes;
};

DiagnoseResult diagnose(const std::vector<OutcomeRecord>& stream, const DiagnoseOptions& options);
Report run_diagnose(const std::filesystem::path& stream, const DiagnoseOptions& options);

}  // namespace gatecheck
