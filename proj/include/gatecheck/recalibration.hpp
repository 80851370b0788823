#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gatecheck/backbone.hpp"
#include "gatecheck/dataset.hpp"
#include "gatecheck/diagnostics.hpp"

namespace gatecheck {

struct ScoredPrediction {
  double confidence = 0.0;  // in [0, 1]
  double predicted = 0.0;
  double actual = 0.0;
};

// Consecutive raw bins [first_bin, last_bin] acting as one tier.
struct RecalGroup {
  std::size_t first_bin = 0;
  std::size_t last_bin = 0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mae = 0.0;
};

struct RecalState {
  std::size_t n_bins = 0;
  std::vector<double> bin_edges;                  // n_bins + 1 edges over [0, 1]
  std::vector<std::size_t> bin_counts;            // window cases per raw bin
  std::vector<std::optional<double>> bin_mae;     // empty for bins without cases
  std::vector<RecalGroup> groups;                 // partition of all raw bins
  double alpha = 0.75;
  double target_mae = 0.0;                        // alpha-quantile of window |error|
  std::optional<double> threshold;                // empty = never act

  std::size_t bin_of(double confidence) const;
  std::size_t group_of(double confidence) const;
};

// Bin, merge inverted groups upward until no group has lower MAE than its
// pooled upper tail, then pick the lowest group whose MAE meets the target.
RecalState recalibrate(std::span<const ScoredPrediction> window, std::size_t n_bins = 10, double alpha = 0.75);

// Worst-MAE group first; within a group, lowest confidence first, then index.
std::vector<std::size_t> adaptive_drop_order(const RecalState& state, std::span<const double> confidence);

// Zero when every group is no better than its upper tail.
std::size_t group_tail_inversions(const RecalState& state);

struct BlockOptions {
  std::size_t n_blocks = 4;
  std::size_t n_bins = 10;
  double alpha = 0.75;
  std::size_t train_tail = 5000;  // window for the first adaptive block
  std::vector<double> fractions = default_fractions();
  // Recalibrate every block on itself. Leaks labels; tests only.
  bool identity_window = false;
};

struct BlockResult {
  std::size_t index = 0;
  std::size_t size = 0;
  double full_rmse = 0.0;
  AbstentionCurve static_curve;
  std::optional<AbstentionCurve> adaptive_curve;
  std::optional<RecalState> state;
};

struct BlockExperiment {
  std::vector<BlockResult> blocks;
  std::vector<std::string> notices;

  std::size_t static_violations() const;
  std::size_t adaptive_violations() const;
};

// Count-based confidence, normalised over the whole test set, drives both the
// static gate and the recalibrated one; the model is never refit.
BlockExperiment block_experiment(const SplitDataset& split, const MfModel& model, const BlockOptions& options = {});

}  // namespace gatecheck
