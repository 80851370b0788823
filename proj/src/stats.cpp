#include "gatecheck/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "gatecheck/error.hpp"

namespace gatecheck::stats {

namespace {

void require_paired(std::span<const double> x, std::span<const double> y, std::size_t min_n) {
  if (x.size() != y.size()) {
    throw InvalidArgument("paired samples differ in length: " + std::to_string(x.size()) +
                          " vs " + std::to_string(y.size()));
  }
  if (x.size() < min_n) {
    throw InvalidArgument("need at least " + std::to_string(min_n) + " paired values, got " +
                          std::to_string(x.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isnan(x[i]) || std::isnan(y[i])) {
      throw InvalidArgument("NaN at position " + std::to_string(i));
    }
  }
}

bool is_constant(std::span<const double> v) {
  return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return sxy / std::sqrt(sxx * syy);
}

// Sum of f(t) over runs of equal values in an already sorted sequence.
template <typename Values, typename F>
double tie_sum(const Values& sorted, F f) {
  double total = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    total += f(static_cast<double>(j - i));
    i = j;
  }
  return total;
}

// Counts inversions (pairs i < j with v[i] > v[j]) while sorting v.
std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& buffer, std::size_t lo,
                          std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_count(v, buffer, lo, mid) + merge_count(v, buffer, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += mid - i;
      buffer[k++] = v[j++];
    } else {
      buffer[k++] = v[i++];
    }
  }
  while (i < mid) buffer[k++] = v[i++];
  while (j < hi) buffer[k++] = v[j++];
  std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(lo),
            buffer.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

double softplus(double eta) {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

}  // namespace

double mean(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("mean of empty sequence");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + j + 1);  // mean of i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = shared;
    i = j;
  }
  return ranks;
}

CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
  require_paired(x, y, 3);
  if (is_constant(x) || is_constant(y)) {
    throw DegenerateInput("spearman: a sequence is constant, correlation undefined");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  CorrelationResult out;
  out.n = x.size();
  out.statistic = std::clamp(pearson(rx, ry), -1.0, 1.0);
  const double dof = static_cast<double>(out.n) - 2.0;
  const double r2 = out.statistic * out.statistic;
  if (r2 >= 1.0) {
    out.p_value = 0.0;
  } else {
    const double t = out.statistic * std::sqrt(dof / (1.0 - r2));
    boost::math::students_t_distribution<double> dist(dof);
    out.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
  }
  return out;
}

CorrelationResult kendall_tau(std::span<const double> x, std::span<const double> y) {
  require_paired(x, y, 2);
  if (is_constant(x) || is_constant(y)) {
    throw DegenerateInput("kendall_tau: a sequence is constant, correlation undefined");
  }
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  double x_ties = 0.0, joint_ties = 0.0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i + 1;
      while (j < n && x[order[j]] == x[order[i]]) ++j;
      const double t = static_cast<double>(j - i);
      x_ties += 0.5 * t * (t - 1.0);
      std::size_t k = i;
      while (k < j) {
        std::size_t m = k + 1;
        while (m < j && y[order[m]] == y[order[k]]) ++m;
        const double u = static_cast<double>(m - k);
        joint_ties += 0.5 * u * (u - 1.0);
        k = m;
      }
      i = j;
    }
  }

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  std::vector<double> buffer(n);
  const auto discordant = static_cast<double>(merge_count(ys, buffer, 0, n));
  // ys is now sorted ascending.
  const double y_ties = tie_sum(ys, [](double t) { return 0.5 * t * (t - 1.0); });

  const double s = pairs - x_ties - y_ties + joint_ties - 2.0 * discordant;
  CorrelationResult out;
  out.n = n;
  out.statistic = std::clamp(s / std::sqrt((pairs - x_ties) * (pairs - y_ties)), -1.0, 1.0);

  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = x[order[i]];
  const double nd = static_cast<double>(n);
  const auto moments = [](const std::vector<double>& sorted) {
    struct {
      double v0, v1, v2;
    } m{tie_sum(sorted, [](double t) { return t * (t - 1.0) * (2.0 * t + 5.0); }),
        tie_sum(sorted, [](double t) { return t * (t - 1.0); }),
        tie_sum(sorted, [](double t) { return t * (t - 1.0) * (t - 2.0); })};
    return m;
  };
  const auto mx = moments(xs);
  const auto my = moments(ys);
  double var_s = (nd * (nd - 1.0) * (2.0 * nd + 5.0) - mx.v0 - my.v0) / 18.0 +
                 mx.v1 * my.v1 / (2.0 * nd * (nd - 1.0));
  if (n > 2) var_s += mx.v2 * my.v2 / (9.0 * nd * (nd - 1.0) * (nd - 2.0));
  const double z = s / std::sqrt(var_s);
  out.p_value = std::min(1.0, std::erfc(std::abs(z) / std::numbers::sqrt2));
  return out;
}

double kolmogorov_survival(double lambda) {
  constexpr int kTerms = 100;
  if (!(lambda > 0.0)) return 1.0;
  double p;
  if (lambda < 1.18) {
    // Jacobi theta form converges quickly for small lambda.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double cdf = 0.0;
    for (int k = 1; k <= kTerms; ++k) {
      const double odd = 2.0 * k - 1.0;
      cdf += std::exp(-odd * odd * pi2 / (8.0 * lambda * lambda));
    }
    cdf *= std::sqrt(2.0 * std::numbers::pi) / lambda;
    p = 1.0 - cdf;
  } else {
    p = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= kTerms; ++k) {
      p += sign * std::exp(-2.0 * k * k * lambda * lambda);
      sign = -sign;
    }
    p *= 2.0;
  }
  return std::clamp(p, 0.0, 1.0);
}

TestResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("ks_two_sample: empty sample");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const double v = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] == v) ++i;
    while (j < sb.size() && sb[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  TestResult out;
  out.statistic = d;
  out.p_value = kolmogorov_survival(std::sqrt(na * nb / (na + nb)) * d);
  return out;
}

TestResult chi_squared_independence(const std::vector<std::vector<double>>& table) {
  const std::size_t rows = table.size();
  if (rows < 2) throw InvalidArgument("chi_squared_independence: need at least 2 rows");
  const std::size_t cols = table.front().size();
  if (cols < 2) throw InvalidArgument("chi_squared_independence: need at least 2 columns");
  std::vector<double> row_sum(rows, 0.0), col_sum(cols, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (table[r].size() != cols) throw InvalidArgument("chi_squared_independence: ragged table");
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = table[r][c];
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw InvalidArgument("chi_squared_independence: counts must be finite and >= 0");
      }
      row_sum[r] += v;
      col_sum[c] += v;
      total += v;
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (row_sum[r] == 0.0) throw DegenerateInput("chi_squared_independence: zero row " + std::to_string(r));
  }
  for (std::size_t c = 0; c < cols; ++c) {
    if (col_sum[c] == 0.0) throw DegenerateInput("chi_squared_independence: zero column " + std::to_string(c));
  }
  double stat = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double expected = row_sum[r] * col_sum[c] / total;
      const double diff = table[r][c] - expected;
      stat += diff * diff / expected;
    }
  }
  TestResult out;
  out.statistic = stat;
  const double dof = static_cast<double>((rows - 1) * (cols - 1));
  boost::math::chi_squared_distribution<double> dist(dof);
  out.p_value = stat <= 0.0 ? 1.0 : boost::math::cdf(boost::math::complement(dist, stat));
  return out;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("roc_auc: length mismatch");
  double positives = 0.0, negatives = 0.0;
  for (int l : labels) {
    if (l == 1) {
      positives += 1.0;
    } else if (l == 0) {
      negatives += 1.0;
    } else {
      throw InvalidArgument("roc_auc: labels must be 0 or 1");
    }
  }
  if (positives == 0.0 || negatives == 0.0) {
    throw DegenerateInput("roc_auc: both classes must be present");
  }
  const auto ranks = average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) rank_sum += ranks[i];
  }
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw InvalidArgument("quantile of empty sequence");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile level outside [0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

// ---------------------------------------------------------------------------
// Logistic regression

double LogisticModel::decision(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  const Eigen::RowVectorXd z =
      (row - feature_means.transpose()).cwiseQuotient(feature_scales.transpose());
  return z.dot(weights) + intercept;
}

double LogisticModel::probability(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  return sigmoid(decision(row));
}

std::vector<double> LogisticModel::probabilities(const Eigen::MatrixXd& features) const {
  std::vector<double> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = probability(features.row(i));
  }
  return out;
}

Eigen::VectorXd LogisticModel::raw_weights() const { return weights.cwiseQuotient(feature_scales); }

double LogisticModel::raw_intercept() const {
  return intercept - raw_weights().dot(feature_means);
}

double logistic_objective(const Eigen::MatrixXd& standardized, std::span<const int> labels,
                          const Eigen::VectorXd& weights, double intercept, double l2) {
  const Eigen::VectorXd eta = (standardized * weights).array() + intercept;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    ll += labels[static_cast<std::size_t>(i)] * eta[i] - softplus(eta[i]);
  }
  return ll - 0.5 * l2 * weights.squaredNorm();
}

LogisticModel fit_logistic(const Eigen::MatrixXd& features, std::span<const int> labels,
                           const LogisticOptions& options) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw InvalidArgument("fit_logistic: rows(features) != len(labels)");
  }
  if (n == 0) throw InvalidArgument("fit_logistic: no rows");
  if (!(options.l2 >= 0.0)) throw InvalidArgument("fit_logistic: l2 must be >= 0");
  if (!features.allFinite()) throw InvalidArgument("fit_logistic: non-finite feature");
  int positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidArgument("fit_logistic: labels must be 0 or 1");
    positives += l;
  }
  if (positives == 0 || positives == n) {
    throw DegenerateInput("fit_logistic: single-class labels, intercept diverges");
  }

  LogisticModel model;
  model.feature_means = features.colwise().mean().transpose();
  model.feature_scales.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double sd = std::sqrt((features.col(j).array() - model.feature_means[j]).square().mean());
    model.feature_scales[j] = sd > 1e-12 ? sd : 1.0;
  }
  const Eigen::MatrixXd z = (features.rowwise() - model.feature_means.transpose()).array().rowwise() /
                            model.feature_scales.transpose().array();

  Eigen::MatrixXd design(n, d + 1);
  design << z, Eigen::VectorXd::Ones(n);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)];
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, options.l2);
  penalty[d] = 0.0;

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  const auto objective = [&](const Eigen::VectorXd& t) {
    return logistic_objective(z, labels, t.head(d), t[d], options.l2);
  };
  // Lipschitz bound of the gradient; used for the fallback step.
  const double lipschitz = 0.25 * design.squaredNorm() + options.l2;

  double current = objective(theta);
  model.objective_trace.push_back(current);
  for (int iter = 0;; ++iter) {
    const Eigen::VectorXd eta = design * theta;
    Eigen::VectorXd p(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = sigmoid(eta[i]);
      w[i] = p[i] * (1.0 - p[i]);
    }
    const Eigen::VectorXd gradient = design.transpose() * (y - p) - penalty.cwiseProduct(theta);
    // Per-observation scale so the tolerance does not tighten with n.
    const double grad_norm = gradient.cwiseAbs().maxCoeff() / static_cast<double>(n);
    model.gradient_norm = grad_norm;
    model.iterations = iter;
    if (grad_norm < options.gradient_tolerance) break;
    if (iter >= options.max_iterations) {
      std::vector<double> last(theta.data(), theta.data() + theta.size());
      throw ConvergenceError("fit_logistic: no convergence after " +
                                 std::to_string(options.max_iterations) +
                                 " iterations (max |gradient| = " + std::to_string(grad_norm) + ")",
                             std::move(last), grad_norm);
    }

    Eigen::MatrixXd hessian = design.transpose() * w.asDiagonal() * design;
    hessian.diagonal() += penalty;
    Eigen::VectorXd direction = hessian.ldlt().solve(gradient);
    if (!direction.allFinite() || direction.dot(gradient) <= 0.0) {
      direction = gradient / lipschitz;
    }

    // Backtracking keeps the objective non-decreasing.
    double step = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 60; ++halving) {
      const Eigen::VectorXd candidate = theta + step * direction;
      const double value = objective(candidate);
      if (std::isfinite(value) && value >= current) {
        theta = candidate;
        current = value;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No representable ascent left: the iterate sits at the optimum up to
      // rounding. Accept it if the gradient is small relative to the data.
      if (grad_norm < 1e-6) break;
      std::vector<double> last(theta.data(), theta.data() + theta.size());
      throw ConvergenceError("fit_logistic: line search failed", std::move(last), grad_norm);
    }
    model.objective_trace.push_back(current);
  }
  model.weights = theta.head(d);
  model.intercept = theta[d];
  return model;
}

// ---------------------------------------------------------------------------

OlsResult fit_ols_r2(const Eigen::MatrixXd& features, std::span<const double> target) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (static_cast<std::size_t>(n) != target.size()) throw InvalidArgument("fit_ols_r2: length mismatch");
  if (n <= d + 1) throw InvalidArgument("fit_ols_r2: need more rows than parameters");
  Eigen::MatrixXd design(n, d + 1);
  design << features, Eigen::VectorXd::Ones(n);
  const Eigen::Map<const Eigen::VectorXd> y(target.data(), n);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < d + 1) throw DegenerateInput("fit_ols_r2: rank-deficient design");
  const Eigen::VectorXd beta = qr.solve(y);

  const double y_mean = y.mean();
  const double sst = (y.array() - y_mean).square().sum();
  if (sst <= 0.0) throw DegenerateInput("fit_ols_r2: constant target");
  const double ssr = (y - design * beta).squaredNorm();

  OlsResult out;
  out.weights = beta.head(d);
  out.intercept = beta[d];
  out.r_squared = 1.0 - ssr / sst;
  return out;
}

}  // namespace gatecheck::stats
