#include "gatecheck/exception_lab.hpp"

#include <cmath>

#include "gatecheck/confidence.hpp"
#include "gatecheck/error.hpp"

namespace gatecheck {

namespace {

std::vector<double> absolute(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::abs(v[i]);
  return out;
}

Eigen::MatrixXd classifier_features(std::span<const double> predictions, std::span<const double> counts) {
  const auto n = static_cast<Eigen::Index>(predictions.size());
  Eigen::MatrixXd x(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    x(i, 0) = predictions[k];
    x(i, 1) = predictions[k] * predictions[k];
    x(i, 2) = counts[k];
  }
  return x;
}

std::vector<double> residuals(std::span<const RatingRecord> records, std::span<const double> predictions) {
  std::vector<double> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out[i] = records[i].rating - predictions[i];
  return out;
}

}  // namespace

ExceptionLabels label_exceptions(std::span<const double> train_residuals, std::span<const double> test_residuals,
                                 double quantile) {
  if (train_residuals.empty() || test_residuals.empty()) {
    throw InvalidArgument("label_exceptions: residual sets must be nonempty");
  }
  const auto train_abs = absolute(train_residuals);
  const auto test_abs = absolute(test_residuals);
  ExceptionLabels out;
  out.tau = stats::quantile(train_abs, quantile);
  const auto label = [&](const std::vector<double>& values, std::vector<int>& labels) {
    std::size_t hits = 0;
    for (double v : values) {
      labels.push_back(v > out.tau ? 1 : 0);
      hits += static_cast<std::size_t>(labels.back());
    }
    return static_cast<double>(hits) / static_cast<double>(values.size());
  };
  out.train_rate = label(train_abs, out.train);
  out.test_rate = label(test_abs, out.test);
  return out;
}

stats::TestResult residual_shift_test(std::span<const double> train_residuals,
                                      std::span<const double> test_residuals) {
  if (train_residuals.empty() || test_residuals.empty()) {
    throw InvalidArgument("residual_shift_test: residual sets must be nonempty");
  }
  return stats::ks_two_sample(absolute(train_residuals), absolute(test_residuals));
}

ClassifierAuc exception_classifier(const SplitDataset& split, std::span<const double> train_predictions,
                                   std::span<const double> test_predictions, const ExceptionLabels& labels,
                                   double l2) {
  if (train_predictions.size() != split.train.size() || test_predictions.size() != split.test.size() ||
      labels.train.size() != split.train.size() || labels.test.size() != split.test.size()) {
    throw InvalidArgument("exception_classifier: inputs do not match the split");
  }
  const auto train_x = classifier_features(train_predictions, structural_counts(split, split.train));
  const auto test_x = classifier_features(test_predictions, structural_counts(split, split.test));
  ClassifierAuc out;
  stats::LogisticOptions options;
  options.l2 = l2;
  out.model = stats::fit_logistic(train_x, labels.train, options);
  out.auc_train = stats::roc_auc(out.model.probabilities(train_x), labels.train);
  out.auc_test = stats::roc_auc(out.model.probabilities(test_x), labels.test);
  return out;
}

ExceptionReport exception_report(const SplitDataset& split, const MfModel& model) {
  const auto train_pred = predict_all(model, split.train);
  const auto test_pred = predict_all(model, split.test);
  const auto train_res = residuals(split.train, train_pred);
  const auto test_res = residuals(split.test, test_pred);
  ExceptionReport report;
  report.labels = label_exceptions(train_res, test_res);
  report.shift = residual_shift_test(train_res, test_res);
  report.classifier = exception_classifier(split, train_pred, test_pred, report.labels);
  return report;
}

std::vector<double> default_binarization_thresholds() { return {3.5, 4.0, 4.5}; }

std::vector<FpFnRow> fp_fn_ratio(std::span<const double> predicted, std::span<const double> actual,
                                 std::span<const double> thresholds) {
  if (predicted.size() != actual.size()) throw InvalidArgument("fp_fn_ratio: length mismatch");
  std::vector<FpFnRow> rows;
  for (double t : thresholds) {
    FpFnRow row;
    row.threshold = t;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const bool p = predicted[i] >= t;
      const bool a = actual[i] >= t;
      if (p && a) ++row.tp;
      else if (p) ++row.fp;
      else if (a) ++row.fn;
      else ++row.tn;
    }
    if (row.fn > 0) row.ratio = static_cast<double>(row.fp) / static_cast<double>(row.fn);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace gatecheck
