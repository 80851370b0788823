#include "gatecheck/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <numeric>

#include "gatecheck/error.hpp"
#include "gatecheck/rng.hpp"

namespace gatecheck {

namespace {

constexpr double kSecondsPerDay = 86400.0;

bool all_equal(std::span<const double> v) {
  return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
}

std::vector<double> abs_errors(std::span<const RatingRecord> test, std::span<const double> predictions) {
  if (test.size() != predictions.size()) throw InvalidArgument("predictions do not match the test set");
  std::vector<double> out(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) out[i] = std::abs(predictions[i] - test[i].rating);
  return out;
}

// Sorted interaction times per entity.
using Timeline = std::map<EntityId, std::vector<std::int64_t>>;

void add_events(Timeline& users, Timeline& items, std::span<const RatingRecord> records) {
  for (const auto& r : records) {
    users[r.user_id].push_back(r.timestamp);
    items[r.item_id].push_back(r.timestamp);
  }
}

struct Recency {
  double gap = 0.0;
  bool never = true;
  double velocity = 0.0;
};

Recency lookup(const Timeline& timeline, EntityId id, std::int64_t t, double window_seconds) {
  Recency out;
  const auto it = timeline.find(id);
  if (it == timeline.end()) return out;
  const auto& times = it->second;
  const auto before = std::lower_bound(times.begin(), times.end(), t);
  if (before == times.begin()) return out;
  out.never = false;
  out.gap = static_cast<double>(t - *(before - 1));
  const auto window_start = static_cast<std::int64_t>(std::ceil(static_cast<double>(t) - window_seconds));
  const auto first = std::lower_bound(times.begin(), before, window_start);
  out.velocity = static_cast<double>(before - first) / (window_seconds / kSecondsPerDay);
  return out;
}

}  // namespace

std::string_view to_string(SignalKind kind) {
  switch (kind) {
    case SignalKind::kCountBased:
      return "count_based";
    case SignalKind::kEnsemble:
      return "ensemble";
    case SignalKind::kRecency:
      return "recency";
    case SignalKind::kResidualPredicted:
      return "residual_predicted";
    case SignalKind::kCombinedStructRecency:
      return "combined_struct_recency";
    case SignalKind::kRandomControl:
      return "random_control";
  }
  return "unknown";
}

SignalKind parse_signal_kind(std::string_view name) {
  for (auto k : {SignalKind::kCountBased, SignalKind::kEnsemble, SignalKind::kRecency,
                 SignalKind::kResidualPredicted, SignalKind::kCombinedStructRecency, SignalKind::kRandomControl}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown confidence kind '" + std::string(name) + "'");
}

std::vector<double> structural_counts(const SplitDataset& split, std::span<const RatingRecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const auto u = split.user_count(r.user_id);
    const auto i = split.item_count(r.item_id);
    switch (split.spec.kind) {
      case SplitKind::kTemporal:
        out.push_back(static_cast<double>(std::min(u, i)));
        break;
      case SplitKind::kColdUser:
        out.push_back(static_cast<double>(i));
        break;
      case SplitKind::kColdItem:
        out.push_back(static_cast<double>(u));
        break;
    }
  }
  return out;
}

std::vector<double> min_max_normalize(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  for (double& v : out) v = range > 0.0 ? (v - *lo) / range : 0.0;
  return out;
}

ConfidenceSignal count_confidence(const SplitDataset& split) {
  ConfidenceSignal signal;
  signal.kind = SignalKind::kCountBased;
  const auto counts = structural_counts(split, split.test);
  if (all_equal(counts)) signal.warnings.push_back("degenerate signal: every test case has the same count");
  signal.scores = min_max_normalize(counts);
  signal.cases.resize(counts.size());
  std::iota(signal.cases.begin(), signal.cases.end(), 0);
  return signal;
}

std::vector<double> member_std(const std::vector<std::vector<double>>& predictions) {
  if (predictions.size() < 2) throw InvalidArgument("member_std: need at least two members");
  const std::size_t n = predictions.front().size();
  for (const auto& p : predictions) {
    if (p.size() != n) throw InvalidArgument("member_std: members disagree on case count");
  }
  const double m = static_cast<double>(predictions.size());
  std::vector<double> out(n);
  // Deviations from the first member, so identical members give exactly 0
  // and ties in the ranking survive.
  for (std::size_t i = 0; i < n; ++i) {
    const double ref = predictions.front()[i];
    double sum = 0.0, ss = 0.0;
    for (const auto& p : predictions) {
      sum += p[i] - ref;
      ss += (p[i] - ref) * (p[i] - ref);
    }
    const double mean = sum / m;
    out[i] = std::sqrt(std::max(0.0, ss / m - mean * mean));
  }
  return out;
}

EnsembleResult ensemble_confidence(const SplitDataset& split, const AlsOptions& options,
                                   std::span<const std::uint64_t> seeds) {
  if (seeds.size() < 2) throw InvalidArgument("ensemble_confidence: need at least two seeds");
  std::vector<std::future<std::vector<double>>> jobs;
  for (std::uint64_t seed : seeds) {
    jobs.push_back(std::async(std::launch::async, [&split, options, seed] {
      AlsOptions member = options;
      member.seed = seed;
      return predict_all(fit_als(split.train, member), split.test);
    }));
  }
  std::vector<std::vector<double>> predictions;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    try {
      predictions.push_back(jobs[k].get());
    } catch (const std::exception& e) {
      // Drain the remaining futures before reporting.
      for (std::size_t j = k + 1; j < jobs.size(); ++j) {
        try {
          jobs[j].get();
        } catch (...) {
        }
      }
      throw Error("ensemble member with seed " + std::to_string(seeds[k]) + " failed: " + e.what());
    }
  }

  EnsembleResult result;
  result.member_std = member_std(predictions);
  const std::size_t n = split.test.size();
  result.mean_prediction.assign(n, 0.0);
  for (const auto& p : predictions) {
    for (std::size_t i = 0; i < n; ++i) result.mean_prediction[i] += p[i];
  }
  for (double& v : result.mean_prediction) v /= static_cast<double>(predictions.size());
  result.signal.kind = SignalKind::kEnsemble;
  result.signal.cases.resize(n);
  std::iota(result.signal.cases.begin(), result.signal.cases.end(), 0);
  result.signal.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) result.signal.scores[i] = -result.member_std[i];
  return result;
}

Eigen::MatrixXd RecencyFeatures::design() const {
  const auto n = static_cast<Eigen::Index>(size());
  Eigen::MatrixXd x(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    x(i, 0) = std::log1p(user_gap[k] / kSecondsPerDay);
    x(i, 1) = user_never[k] ? 1.0 : 0.0;
    x(i, 2) = std::log1p(item_gap[k] / kSecondsPerDay);
    x(i, 3) = item_never[k] ? 1.0 : 0.0;
    x(i, 4) = user_velocity[k];
    x(i, 5) = item_velocity[k];
  }
  return x;
}

RecencyFeatures recency_features(const SplitDataset& split, double window_days) {
  if (!(window_days > 0.0)) throw InvalidArgument("recency_features: window must be positive");
  Timeline users, items;
  add_events(users, items, split.train);
  add_events(users, items, split.test);
  for (auto* timeline : {&users, &items}) {
    for (auto& [_, times] : *timeline) std::sort(times.begin(), times.end());
  }
  const double window_seconds = window_days * kSecondsPerDay;
  RecencyFeatures f;
  const std::size_t n = split.test.size();
  f.user_gap.reserve(n);
  for (const auto& r : split.test) {
    const auto u = lookup(users, r.user_id, r.timestamp, window_seconds);
    const auto i = lookup(items, r.item_id, r.timestamp, window_seconds);
    f.user_gap.push_back(u.gap);
    f.user_never.push_back(u.never ? 1 : 0);
    f.user_velocity.push_back(u.velocity);
    f.item_gap.push_back(i.gap);
    f.item_never.push_back(i.never ? 1 : 0);
    f.item_velocity.push_back(i.velocity);
  }
  return f;
}

HalfSplit half_split(std::size_t n, std::uint64_t seed) {
  if (n < 4) throw InvalidArgument("half_split: need at least four cases");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  HalfSplit out;
  out.fit.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n / 2));
  out.eval.assign(perm.begin() + static_cast<std::ptrdiff_t>(n / 2), perm.end());
  std::sort(out.fit.begin(), out.fit.end());
  std::sort(out.eval.begin(), out.eval.end());
  return out;
}

LearnedConfidence learned_confidence(SignalKind kind, const Eigen::MatrixXd& features,
                                     std::span<const double> abs_errors, const LearnedOptions& options) {
  if (static_cast<std::size_t>(features.rows()) != abs_errors.size()) {
    throw InvalidArgument("learned_confidence: feature rows do not match errors");
  }
  LearnedConfidence out;
  out.halves = half_split(abs_errors.size(), options.seed);
  const auto& fit = out.halves.fit;
  const auto& eval = out.halves.eval;

  std::vector<double> fit_err;
  fit_err.reserve(fit.size());
  for (auto i : fit) fit_err.push_back(abs_errors[i]);
  out.label_threshold = stats::quantile(fit_err, 0.5);

  Eigen::MatrixXd x_fit(static_cast<Eigen::Index>(fit.size()), features.cols());
  std::vector<int> labels(fit.size());
  for (std::size_t k = 0; k < fit.size(); ++k) {
    x_fit.row(static_cast<Eigen::Index>(k)) = features.row(static_cast<Eigen::Index>(fit[k]));
    labels[k] = fit_err[k] > out.label_threshold ? 1 : 0;
  }
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(labels.size())) {
    throw DegenerateInput("learned confidence: every fit-half error falls on one side of the median");
  }
  for (Eigen::Index j = 0; j < x_fit.cols(); ++j) {
    if ((x_fit.col(j).array() == x_fit(0, j)).all()) {
      out.signal.warnings.push_back("degenerate feature: column " + std::to_string(j) + " is constant");
    }
  }
  stats::LogisticOptions lo;
  lo.l2 = options.l2;
  out.model = stats::fit_logistic(x_fit, labels, lo);

  out.signal.kind = kind;
  out.signal.cases = eval;
  out.signal.scores.reserve(eval.size());
  for (auto i : eval) {
    out.signal.scores.push_back(1.0 - out.model.probability(features.row(static_cast<Eigen::Index>(i))));
  }
  return out;
}

Eigen::MatrixXd residual_features(const SplitDataset& split, std::span<const double> predictions) {
  if (predictions.size() != split.test.size()) throw InvalidArgument("predictions do not match the test set");
  const auto counts = min_max_normalize(structural_counts(split, split.test));
  const auto n = static_cast<Eigen::Index>(predictions.size());
  Eigen::MatrixXd x(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = predictions[static_cast<std::size_t>(i)];
    x(i, 0) = p;
    x(i, 1) = p * p;
    x(i, 2) = counts[static_cast<std::size_t>(i)];
  }
  return x;
}

LearnedConfidence recency_confidence(const SplitDataset& split, std::span<const double> predictions,
                                     const LearnedOptions& options) {
  const auto errors = abs_errors(split.test, predictions);
  const auto features = recency_features(split, options.window_days);
  auto out = learned_confidence(SignalKind::kRecency, features.design(), errors, options);
  const bool one_time = std::all_of(split.test.begin(), split.test.end(),
                                    [&](const RatingRecord& r) { return r.timestamp == split.test.front().timestamp; });
  if (one_time) out.signal.warnings.push_back("degenerate feature: every test case shares one timestamp");
  return out;
}

LearnedConfidence residual_predicted_confidence(const SplitDataset& split, std::span<const double> predictions,
                                                const LearnedOptions& options) {
  const auto errors = abs_errors(split.test, predictions);
  return learned_confidence(SignalKind::kResidualPredicted, residual_features(split, predictions), errors,
                            options);
}

LearnedConfidence combined_confidence(const SplitDataset& split, std::span<const double> predictions,
                                      const LearnedOptions& options) {
  const auto errors = abs_errors(split.test, predictions);
  const Eigen::MatrixXd recency = recency_features(split, options.window_days).design();
  const auto counts = min_max_normalize(structural_counts(split, split.test));
  Eigen::MatrixXd x(recency.rows(), recency.cols() + 1);
  x.leftCols(recency.cols()) = recency;
  for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, recency.cols()) = counts[static_cast<std::size_t>(i)];
  return learned_confidence(SignalKind::kCombinedStructRecency, x, errors, options);
}

ConfidenceSignal random_confidence(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("random_confidence: n must be positive");
  ConfidenceSignal signal;
  signal.kind = SignalKind::kRandomControl;
  Rng rng(seed);
  signal.scores.resize(n);
  for (double& s : signal.scores) s = rng.uniform();
  signal.cases.resize(n);
  std::iota(signal.cases.begin(), signal.cases.end(), 0);
  return signal;
}

std::vector<double> dense_scores(const ConfidenceSignal& signal, std::size_t n) {
  std::vector<double> out(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < signal.cases.size(); ++k) {
    if (signal.cases[k] >= n) throw InvalidArgument("dense_scores: case index out of range");
    out[signal.cases[k]] = signal.scores[k];
  }
  return out;
}

}  // namespace gatecheck
