#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace gatecheck::stats {

struct CorrelationResult {
  double statistic = 0.0;  // rho or tau-b
  double p_value = 1.0;    // two-sided
  std::size_t n = 0;
};

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Average ranks (1-based), ties share the mean of the positions they occupy.
std::vector<double> average_ranks(std::span<const double> values);

// Spearman rho on average ranks; two-sided p from the t approximation with
// n - 2 degrees of freedom. Throws DegenerateInput when either side is
// constant, InvalidArgument when n < 3 or lengths differ.
CorrelationResult spearman(std::span<const double> x, std::span<const double> y);

// Kendall tau-b in O(n log n) (Knight's merge-sort count). The p-value uses
// the normal approximation with the tie-corrected variance of S.
CorrelationResult kendall_tau(std::span<const double> x, std::span<const double> y);

// Two-sample Kolmogorov-Smirnov. stat = sup |F_a - F_b| over the pooled
// support; p from the asymptotic Kolmogorov distribution evaluated at
// sqrt(n_a n_b / (n_a + n_b)) * stat.
TestResult ks_two_sample(std::span<const double> a, std::span<const double> b);

// Survival function of the Kolmogorov distribution, series truncated at 100
// terms.
double kolmogorov_survival(double lambda);

// Pearson chi-squared test of independence on an r x c count table.
TestResult chi_squared_independence(const std::vector<std::vector<double>>& table);

// Mann-Whitney form of ROC AUC; tied scores contribute 1/2.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Linear-interpolation quantile (type 7), q in [0, 1].
double quantile(std::span<const double> values, double q);

double mean(std::span<const double> values);

struct LogisticOptions {
  double l2 = 1.0;
  int max_iterations = 200;
  double gradient_tolerance = 1e-8;
};

// L2-penalised logistic regression. Features are z-scored internally and the
// penalty applies to the standardised weights only (intercept unpenalised).
struct LogisticModel {
  Eigen::VectorXd feature_means;
  Eigen::VectorXd feature_scales;
  Eigen::VectorXd weights;  // in standardised units
  double intercept = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  // Penalised log-likelihood after each accepted iterate, starting at w = 0.
  std::vector<double> objective_trace;

  double decision(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  double probability(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  std::vector<double> probabilities(const Eigen::MatrixXd& features) const;
  // Weights and intercept mapped back to the raw feature scale.
  Eigen::VectorXd raw_weights() const;
  double raw_intercept() const;
};

// Damped Newton (IRLS) from zero weights. Falls back to a gradient step when
// the Newton direction is not finite. Converged when max |gradient| / n falls
// below the tolerance; otherwise throws ConvergenceError carrying the last
// iterate (weights then intercept) and gradient norm.
LogisticModel fit_logistic(const Eigen::MatrixXd& features, std::span<const int> labels,
                           const LogisticOptions& options = {});

// Penalised log-likelihood of a standardised-space parameter vector; exposed
// for solver diagnostics.
double logistic_objective(const Eigen::MatrixXd& standardized, std::span<const int> labels,
                          const Eigen::VectorXd& weights, double intercept, double l2);

struct OlsResult {
  Eigen::VectorXd weights;  // coefficients for the supplied columns
  double intercept = 0.0;
  double r_squared = 0.0;
};

// Least squares with an intercept column; R^2 = 1 - SSR/SST. Throws
// DegenerateInput on a rank-deficient design or a constant target.
OlsResult fit_ols_r2(const Eigen::MatrixXd& features, std::span<const double> target);

}  // namespace gatecheck::stats
