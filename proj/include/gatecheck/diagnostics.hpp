#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gatecheck/stats.hpp"

namespace gatecheck {

// Direction of the per-case quality column: accuracy-like values improve
// upward, error-like values (squared error, MAE) improve downward.
enum class QualityMode { kAccuracy, kError };

// ---------------------------------------------------------------------------
// C1: rank-accuracy alignment

struct C1Thresholds {
  double min_rho = 0.0;   // rho must exceed this
  double max_p = 0.01;    // and be significant at this level
};

struct C1Report {
  stats::CorrelationResult spearman;
  stats::CorrelationResult kendall;
  bool pass = false;
};

// `accuracy` is oriented so that larger is better ({0,1} indicator or a
// negated loss).
C1Report check_c1(std::span<const double> confidence, std::span<const double> accuracy,
                  const C1Thresholds& thresholds = {});

// Correct-within-tolerance indicator used as the accuracy proxy for ratings.
std::vector<double> accuracy_indicator(std::span<const double> predicted,
                                       std::span<const double> actual, double tolerance = 1.0);

// ---------------------------------------------------------------------------
// C2: no inversion zones

struct Zone {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_quality = 0.0;
};

struct ZoneReport {
  QualityMode mode = QualityMode::kAccuracy;
  std::vector<double> bin_edges;  // zones.size() + 1 increasing edges
  std::vector<Zone> zones;
  // Original equal-width bins that held no cases and were folded into the
  // next non-empty zone to their right (or the last zone, when trailing).
  std::vector<std::size_t> merged_empty_bins;
  // Zones whose mean quality beats the pooled quality of every zone above.
  std::vector<std::size_t> tail_inversions;
  // Adjacent zone pairs (i, i + 1) where the lower zone is better.
  std::vector<std::pair<std::size_t, std::size_t>> adjacent_inversions;

  std::size_t inversion_count() const { return tail_inversions.size(); }
};

// Equal-width bins over the observed confidence range.
ZoneReport check_c2(std::span<const double> confidence, std::span<const double> outcome,
                    std::size_t n_bins = 5, QualityMode mode = QualityMode::kAccuracy);

// Same verdict from an already aggregated zone table (lowest zone first).
ZoneReport check_c2_zones(std::span<const Zone> zones, QualityMode mode = QualityMode::kAccuracy);

struct PairInversion {
  double band_lower = 0.0;  // a
  double band_upper = 0.0;  // b; the band is [a, b), the tail [b, inf)
  double band_mean = 0.0;
  double tail_mean = 0.0;
};

// Exhaustive C2 over every pair of distinct observed confidence levels.
std::vector<PairInversion> c2_pair_inversions(std::span<const double> confidence,
                                              std::span<const double> outcome,
                                              QualityMode mode = QualityMode::kAccuracy);

// ---------------------------------------------------------------------------
// Abstention curves

enum class CurveMetric { kRmse, kAccuracy };

struct AbstentionCurve {
  CurveMetric metric_kind = CurveMetric::kRmse;
  std::vector<double> fractions;
  std::vector<double> metric;
  std::vector<double> coverage;
  std::vector<std::size_t> retained;
  std::size_t violation_count = 0;
  // Adverse steps smaller than the negligible tolerance (still counted above).
  std::size_t negligible_violations = 0;
  double max_adverse_step = 0.0;
  // k such that the step from fractions[k-1] to fractions[k] is adverse.
  std::vector<std::size_t> violation_steps;
};

inline constexpr double kNegligibleStep = 5e-4;

std::vector<double> default_fractions();  // 0, .05, ..., .25

// Lowest confidence first; ties keep case-index order.
std::vector<std::size_t> abstention_order(std::span<const double> confidence);

// Number of cases abstained at fraction k of n, floor(k * n).
std::size_t abstained_count(double fraction, std::size_t n);

// Generic curve: `values` holds per-case squared errors (kRmse) or accuracy
// indicators (kAccuracy); cases are abstained in `drop_order`.
AbstentionCurve curve_from_order(std::span<const std::size_t> drop_order,
                                 std::span<const double> values, std::span<const double> fractions,
                                 CurveMetric metric, double negligible = kNegligibleStep);

// Selective RMSE: drop the K * n lowest-confidence predictions per fraction.
AbstentionCurve abstention_curve(std::span<const double> predicted, std::span<const double> actual,
                                 std::span<const double> confidence,
                                 std::span<const double> fractions,
                                 double negligible = kNegligibleStep);

// ---------------------------------------------------------------------------
// Selective accuracy and the law-of-total-expectation identity

struct SelectivePoint {
  double threshold = 0.0;
  double coverage = 0.0;
  std::optional<double> selective_accuracy;  // empty when no case is retained
  std::size_t retained = 0;
};

std::vector<SelectivePoint> selective_accuracy_curve(std::span<const double> confidence,
                                                     std::span<const double> accuracy,
                                                     std::span<const double> thresholds);

// |SA(t1) phi(t1) - SA(t2) phi(t2) - (phi(t1) - phi(t2)) E[acc | t1 <= c < t2]|
double decomposition_identity_check(std::span<const double> confidence,
                                    std::span<const double> accuracy, double t1, double t2);

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
};

CalibrationReport ece(std::span<const double> confidence, std::span<const double> accuracy,
                      std::size_t n_bins = 10);

// ---------------------------------------------------------------------------
// Tier separation

enum class Tier { kHigh = 0, kMed = 1, kLow = 2 };

Tier parse_tier(const std::string& name);
const char* tier_name(Tier tier);

struct TierStats {
  std::size_t count = 0;
  std::size_t positives = 0;
  std::optional<double> rate;
};

struct TierReport {
  TierStats high, med, low;
  std::optional<double> high_over_med_lift;
  std::string lift_note;  // why the lift is undefined, when it is
  bool monotonic = false;  // strict ordering over non-empty tiers
  std::optional<stats::TestResult> chi_squared;

  const TierStats& stats(Tier t) const;
};

TierReport tier_report(std::span<const Tier> tiers, std::span<const double> outcomes);

// ---------------------------------------------------------------------------
// Variance decomposition

struct VarianceDecomposition {
  double r2_structural = 0.0;
  double r2_contextual = 0.0;
  std::optional<double> structural_fraction;
};

VarianceDecomposition variance_decomposition(std::span<const double> confidence,
                                             const Eigen::MatrixXd& structural_features,
                                             const Eigen::MatrixXd& contextual_features);

}  // namespace gatecheck
