#include "gatecheck/recalibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gatecheck/confidence.hpp"
#include "gatecheck/error.hpp"

namespace gatecheck {

namespace {

struct Pool {
  double sum = 0.0;
  std::size_t count = 0;
  double mean() const { return sum / static_cast<double>(count); }
};

}  // namespace

std::size_t RecalState::bin_of(double confidence) const {
  const auto b = static_cast<std::size_t>(std::floor(std::clamp(confidence, 0.0, 1.0) * static_cast<double>(n_bins)));
  return std::min(b, n_bins - 1);
}

std::size_t RecalState::group_of(double confidence) const {
  const std::size_t b = bin_of(confidence);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (b >= groups[g].first_bin && b <= groups[g].last_bin) return g;
  }
  throw Error("recalibration groups do not cover bin " + std::to_string(b));
}

RecalState recalibrate(std::span<const ScoredPrediction> window, std::size_t n_bins, double alpha) {
  if (window.empty()) throw InvalidArgument("recalibrate: empty window");
  if (n_bins == 0) throw InvalidArgument("recalibrate: n_bins must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("recalibrate: alpha must lie in (0, 1]");

  RecalState state;
  state.n_bins = n_bins;
  state.alpha = alpha;
  for (std::size_t k = 0; k <= n_bins; ++k) state.bin_edges.push_back(static_cast<double>(k) / static_cast<double>(n_bins));

  // Step 1: per-bin window MAE.
  std::vector<Pool> bins(n_bins);
  std::vector<double> abs_err;
  abs_err.reserve(window.size());
  for (const auto& p : window) {
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) {
      throw InvalidArgument("recalibrate: confidence outside [0, 1]");
    }
    const double e = std::abs(p.predicted - p.actual);
    abs_err.push_back(e);
    auto& pool = bins[state.bin_of(p.confidence)];
    pool.sum += e;
    ++pool.count;
  }
  for (const auto& pool : bins) {
    state.bin_counts.push_back(pool.count);
    state.bin_mae.push_back(pool.count ? std::optional<double>(pool.mean()) : std::nullopt);
  }

  // Groups start as non-empty bins; empty bins ride along with the next
  // non-empty bin on the right, trailing ones with the last group.
  std::vector<Pool> pools;
  std::size_t start = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (bins[b].count == 0) continue;
    state.groups.push_back({start, b, 0.0, 0.0, 0, 0.0});
    pools.push_back(bins[b]);
    start = b + 1;
  }
  state.groups.back().last_bin = n_bins - 1;

  // Step 2: merge any group that beats its pooled upper tail into its upper
  // neighbour, restarting the scan after each merge.
  bool merged = true;
  while (merged) {
    merged = false;
    for (std::size_t j = 0; j + 1 < state.groups.size(); ++j) {
      Pool tail;
      for (std::size_t k = j + 1; k < pools.size(); ++k) {
        tail.sum += pools[k].sum;
        tail.count += pools[k].count;
      }
      if (pools[j].mean() < tail.mean()) {
        state.groups[j].last_bin = state.groups[j + 1].last_bin;
        pools[j].sum += pools[j + 1].sum;
        pools[j].count += pools[j + 1].count;
        state.groups.erase(state.groups.begin() + static_cast<std::ptrdiff_t>(j + 1));
        pools.erase(pools.begin() + static_cast<std::ptrdiff_t>(j + 1));
        merged = true;
        break;
      }
    }
  }
  for (std::size_t g = 0; g < state.groups.size(); ++g) {
    auto& group = state.groups[g];
    group.lower = state.bin_edges[group.first_bin];
    group.upper = state.bin_edges[group.last_bin + 1];
    group.count = pools[g].count;
    group.mae = pools[g].mean();
  }

  // Step 3: act from the lowest tier whose MAE meets the target.
  state.target_mae = stats::quantile(abs_err, alpha);
  for (const auto& group : state.groups) {
    if (group.mae <= state.target_mae) {
      state.threshold = group.lower;
      break;
    }
  }
  return state;
}

std::size_t group_tail_inversions(const RecalState& state) {
  std::size_t inversions = 0;
  for (std::size_t j = 0; j + 1 < state.groups.size(); ++j) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t k = j + 1; k < state.groups.size(); ++k) {
      sum += state.groups[k].mae * static_cast<double>(state.groups[k].count);
      count += state.groups[k].count;
    }
    if (state.groups[j].mae < sum / static_cast<double>(count)) ++inversions;
  }
  return inversions;
}

std::vector<std::size_t> adaptive_drop_order(const RecalState& state, std::span<const double> confidence) {
  std::vector<std::size_t> by_mae(state.groups.size());
  std::iota(by_mae.begin(), by_mae.end(), 0);
  std::stable_sort(by_mae.begin(), by_mae.end(),
                   [&](std::size_t a, std::size_t b) { return state.groups[a].mae > state.groups[b].mae; });
  std::vector<std::size_t> badness(state.groups.size());
  for (std::size_t r = 0; r < by_mae.size(); ++r) badness[by_mae[r]] = r;

  std::vector<std::size_t> rank(confidence.size());
  for (std::size_t i = 0; i < confidence.size(); ++i) rank[i] = badness[state.group_of(confidence[i])];
  std::vector<std::size_t> order(confidence.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rank[a] != rank[b]) return rank[a] < rank[b];
    return confidence[a] < confidence[b];
  });
  return order;
}

std::size_t BlockExperiment::static_violations() const {
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.static_curve.violation_count;
  return total;
}

std::size_t BlockExperiment::adaptive_violations() const {
  std::size_t total = 0;
  for (const auto& b : blocks) {
    if (b.adaptive_curve) total += b.adaptive_curve->violation_count;
  }
  return total;
}

BlockExperiment block_experiment(const SplitDataset& split, const MfModel& model, const BlockOptions& options) {
  const std::size_t n = split.test.size();
  if (options.n_blocks == 0) throw InvalidArgument("block_experiment: n_blocks must be positive");
  if (n < options.n_blocks * 1000) {
    throw InvalidArgument("block_experiment: need at least 1000 test cases per block");
  }

  const auto test_pred = predict_all(model, split.test);
  const auto test_counts = structural_counts(split, split.test);
  const auto [lo_it, hi_it] = std::minmax_element(test_counts.begin(), test_counts.end());
  const double lo = *lo_it;
  const double range = *hi_it - *lo_it;
  const auto normalize = [&](double c) { return range > 0.0 ? std::clamp((c - lo) / range, 0.0, 1.0) : 0.0; };

  std::vector<ScoredPrediction> scored(n);
  for (std::size_t i = 0; i < n; ++i) {
    scored[i] = {normalize(test_counts[i]), test_pred[i], split.test[i].rating};
  }

  // Most recent train cases, scored on the test-set normalisation.
  const std::size_t tail = std::min(options.train_tail, split.train.size());
  const std::span<const RatingRecord> train_tail(split.train.data() + (split.train.size() - tail), tail);
  const auto tail_counts = structural_counts(split, train_tail);
  std::vector<ScoredPrediction> window;
  for (std::size_t i = 0; i < tail; ++i) {
    window.push_back({normalize(tail_counts[i]), model.predict(train_tail[i].user_id, train_tail[i].item_id),
                      train_tail[i].rating});
  }

  BlockExperiment out;
  if (options.n_blocks == 1) out.notices.push_back("single block: adaptive gate skipped, static only");
  for (std::size_t k = 0; k < options.n_blocks; ++k) {
    const std::size_t begin = k * n / options.n_blocks;
    const std::size_t end = (k + 1) * n / options.n_blocks;
    const std::span<const ScoredPrediction> block(scored.data() + begin, end - begin);
    std::vector<double> conf, pred, actual, squared;
    for (const auto& s : block) {
      conf.push_back(s.confidence);
      pred.push_back(s.predicted);
      actual.push_back(s.actual);
      squared.push_back((s.predicted - s.actual) * (s.predicted - s.actual));
    }
    BlockResult result;
    result.index = k + 1;
    result.size = block.size();
    result.full_rmse = rmse(pred, actual);
    result.static_curve = abstention_curve(pred, actual, conf, options.fractions);
    if (options.n_blocks > 1) {
      const auto state = options.identity_window ? recalibrate(block, options.n_bins, options.alpha)
                                                 : recalibrate(window, options.n_bins, options.alpha);
      const auto order = adaptive_drop_order(state, conf);
      result.adaptive_curve = curve_from_order(order, squared, options.fractions, CurveMetric::kRmse);
      result.state = state;
    }
    out.blocks.push_back(std::move(result));
    window.assign(block.begin(), block.end());
  }
  return out;
}

}  // namespace gatecheck
