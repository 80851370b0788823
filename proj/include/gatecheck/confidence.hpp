#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gatecheck/backbone.hpp"
#include "gatecheck/dataset.hpp"
#include "gatecheck/stats.hpp"

namespace gatecheck {

enum class SignalKind {
  kCountBased,
  kEnsemble,
  kRecency,
  kResidualPredicted,
  kCombinedStructRecency,
  kRandomControl,
};

std::string_view to_string(SignalKind kind);
SignalKind parse_signal_kind(std::string_view name);

// Higher score = more confident. `cases[k]` is the test-case index that
// `scores[k]` belongs to; learned signals only score their evaluation half.
struct ConfidenceSignal {
  SignalKind kind = SignalKind::kCountBased;
  std::vector<std::size_t> cases;
  std::vector<double> scores;
  std::vector<std::string> warnings;
};

// Split-specific observation count per test case: min(user, item) count for
// temporal, item count for cold-user, user count for cold-item.
std::vector<double> structural_counts(const SplitDataset& split, std::span<const RatingRecord> records);

std::vector<double> min_max_normalize(std::span<const double> values);

ConfidenceSignal count_confidence(const SplitDataset& split);

struct EnsembleResult {
  ConfidenceSignal signal;                // negated member standard deviation
  std::vector<double> mean_prediction;    // average of the members
  std::vector<double> member_std;         // population standard deviation
};

// One ALS fit per seed (run concurrently); everything but the seed comes
// from `options`.
EnsembleResult ensemble_confidence(const SplitDataset& split, const AlsOptions& options,
                                   std::span<const std::uint64_t> seeds);

// Disagreement of precomputed member predictions (members x cases).
std::vector<double> member_std(const std::vector<std::vector<double>>& predictions);

struct RecencyFeatures {
  // Seconds since the entity's most recent interaction strictly before the
  // case; zero when the entity was never observed (see the flags).
  std::vector<double> user_gap;
  std::vector<double> item_gap;
  std::vector<char> user_never;
  std::vector<char> item_never;
  // Interactions per day over the trailing window, excluding the case itself.
  std::vector<double> user_velocity;
  std::vector<double> item_velocity;

  std::size_t size() const { return user_gap.size(); }
  // Columns: log1p(user gap days), user flag, log1p(item gap days), item
  // flag, user velocity, item velocity.
  Eigen::MatrixXd design() const;
};

// History is every interaction timestamp in train and test; ratings of test
// events are never read.
RecencyFeatures recency_features(const SplitDataset& split, double window_days = 30.0);

struct HalfSplit {
  std::vector<std::size_t> fit;   // sorted case indices
  std::vector<std::size_t> eval;  // sorted case indices
};

// Seeded permutation; the first floor(n/2) cases train the confidence model.
HalfSplit half_split(std::size_t n, std::uint64_t seed);

struct LearnedConfidence {
  ConfidenceSignal signal;  // scored on halves.eval
  HalfSplit halves;
  stats::LogisticModel model;
  double label_threshold = 0.0;  // median absolute error of the fit half
};

struct LearnedOptions {
  std::uint64_t seed = 42;
  double l2 = 1.0;
  double window_days = 30.0;
};

// Logistic model of "absolute error above the fit-half median" from
// `features` (one row per test case); confidence = 1 - P(high error).
LearnedConfidence learned_confidence(SignalKind kind, const Eigen::MatrixXd& features,
                                     std::span<const double> abs_errors, const LearnedOptions& options);

// Prediction, squared prediction and normalised structural count.
Eigen::MatrixXd residual_features(const SplitDataset& split, std::span<const double> predictions);

LearnedConfidence recency_confidence(const SplitDataset& split, std::span<const double> predictions,
                                     const LearnedOptions& options = {});
LearnedConfidence residual_predicted_confidence(const SplitDataset& split, std::span<const double> predictions,
                                                const LearnedOptions& options = {});
// Recency features plus the normalised structural count.
LearnedConfidence combined_confidence(const SplitDataset& split, std::span<const double> predictions,
                                      const LearnedOptions& options = {});

ConfidenceSignal random_confidence(std::size_t n, std::uint64_t seed);

// Scores laid out as a dense vector over all n test cases; cases the signal
// does not cover are left at NaN.
std::vector<double> dense_scores(const ConfidenceSignal& signal, std::size_t n);

}  // namespace gatecheck
