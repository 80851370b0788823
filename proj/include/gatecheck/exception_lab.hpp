#pragma once

#include <optional>
#include <span>
#include <vector>

#include "gatecheck/backbone.hpp"
#include "gatecheck/dataset.hpp"
#include "gatecheck/stats.hpp"

namespace gatecheck {

struct ExceptionLabels {
  double tau = 0.0;  // 95th percentile of |train residual|
  double train_rate = 0.0;
  double test_rate = 0.0;
  std::vector<int> train;  // 1 when |residual| > tau
  std::vector<int> test;
};

ExceptionLabels label_exceptions(std::span<const double> train_residuals, std::span<const double> test_residuals,
                                 double quantile = 0.95);

// KS on absolute residuals.
stats::TestResult residual_shift_test(std::span<const double> train_residuals,
                                      std::span<const double> test_residuals);

struct ClassifierAuc {
  double auc_train = 0.0;
  double auc_test = 0.0;
  stats::LogisticModel model;
};

// Features: prediction, squared prediction and the split-specific count.
ClassifierAuc exception_classifier(const SplitDataset& split, std::span<const double> train_predictions,
                                   std::span<const double> test_predictions, const ExceptionLabels& labels,
                                   double l2 = 1.0);

struct ExceptionReport {
  ExceptionLabels labels;
  stats::TestResult shift;
  ClassifierAuc classifier;
};

ExceptionReport exception_report(const SplitDataset& split, const MfModel& model);

struct FpFnRow {
  double threshold = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> ratio;  // FP / FN, absent when FN = 0
};

std::vector<double> default_binarization_thresholds();  // 3.5, 4.0, 4.5

// A value is positive when >= threshold, for predictions and actuals alike.
std::vector<FpFnRow> fp_fn_ratio(std::span<const double> predicted, std::span<const double> actual,
                                 std::span<const double> thresholds);

}  // namespace gatecheck
