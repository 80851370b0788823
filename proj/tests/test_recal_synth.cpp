#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "gatecheck/error.hpp"
#include "gatecheck/recalibration.hpp"
#include "gatecheck/rng.hpp"
#include "gatecheck/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gatecheck;
using doctest::Approx;

namespace {

std::vector<ScoredPrediction> random_window(Rng& rng, std::size_t n) {
  std::vector<ScoredPrediction> w(n);
  const double slope = rng.uniform(-1.0, 1.0);
  for (auto& p : w) {
    // Confidence clustered on a few values so some bins stay empty.
    p.confidence = static_cast<double>(rng.below(7)) / 6.0 * rng.uniform(0.9, 1.0);
    p.predicted = 3.0;
    p.actual = 3.0 + (1.0 + slope * p.confidence) * rng.normal();
  }
  return w;
}

}  // namespace

TEST_CASE("recalibrated groups partition the bins and carry no tail inversion") {
  Rng rng(61);
  for (int trial = 0; trial < 200; ++trial) {
    const auto window = random_window(rng, 20 + rng.below(400));
    const std::size_t n_bins = 2 + rng.below(12);
    const auto state = recalibrate(window, n_bins, 0.75);

    REQUIRE_FALSE(state.groups.empty());
    CHECK(state.groups.front().first_bin == 0);
    CHECK(state.groups.back().last_bin == n_bins - 1);
    for (std::size_t g = 1; g < state.groups.size(); ++g) {
      CHECK(state.groups[g].first_bin == state.groups[g - 1].last_bin + 1);
    }

    // Recount each group straight from the window.
    std::vector<double> sums(state.groups.size(), 0.0), counts(state.groups.size(), 0.0);
    std::vector<double> errors;
    for (const auto& p : window) {
      const auto bin = std::min(static_cast<std::size_t>(p.confidence * static_cast<double>(n_bins)), n_bins - 1);
      std::size_t g = 0;
      while (state.groups[g].last_bin < bin) ++g;
      sums[g] += std::abs(p.predicted - p.actual);
      counts[g] += 1;
      errors.push_back(std::abs(p.predicted - p.actual));
    }
    for (std::size_t g = 0; g < state.groups.size(); ++g) {
      CHECK(state.groups[g].count == static_cast<std::size_t>(counts[g]));
      CHECK(state.groups[g].mae == Approx(sums[g] / counts[g]).epsilon(1e-12));
      double tail_sum = 0, tail_n = 0;
      for (std::size_t h = g + 1; h < state.groups.size(); ++h) {
        tail_sum += sums[h];
        tail_n += counts[h];
      }
      if (tail_n > 0) CHECK(sums[g] / counts[g] >= tail_sum / tail_n - 1e-12);
    }
    CHECK(group_tail_inversions(state) == 0);

    CHECK(state.target_mae == Approx(oracle::quantile_type7(errors, 0.75)).epsilon(1e-12));
    std::optional<double> expected;
    for (const auto& g : state.groups) {
      if (g.mae <= state.target_mae) {
        expected = g.lower;
        break;
      }
    }
    CHECK(state.threshold == expected);
  }
}

TEST_CASE("recalibration merges an inverted low bin upward") {
  // Bin 0 is accurate, bin 1 is poor, bin 2 is fair: bin 0 beats its tail.
  std::vector<ScoredPrediction> w;
  for (int i = 0; i < 10; ++i) w.push_back({0.1, 3.0, 3.1});
  for (int i = 0; i < 10; ++i) w.push_back({0.5, 3.0, 5.0});
  for (int i = 0; i < 10; ++i) w.push_back({0.9, 3.0, 3.5});
  const auto s = recalibrate(w, 3, 0.75);
  REQUIRE(s.groups.size() == 2);
  CHECK(s.groups[0].first_bin == 0);
  CHECK(s.groups[0].last_bin == 1);
  CHECK(s.groups[0].mae == Approx(1.05));
  CHECK(s.group_of(0.9) == 1);
  // Worst group first, lowest confidence first inside it.
  const std::vector<double> conf{0.9, 0.5, 0.1, 0.95};
  CHECK(adaptive_drop_order(s, conf) == std::vector<std::size_t>{2, 1, 0, 3});
  CHECK_THROWS_AS(recalibrate(w, 3, 0.0), InvalidArgument);
}

TEST_CASE("block windows never include the block they gate") {
  const auto records = testutil::toy_ratings(200, 150, 25000, 71);
  const auto split = make_split(records, {SplitKind::kTemporal, 0.2, 42});
  AlsOptions opt;
  opt.rank = 3;
  opt.iterations = 3;
  const auto model = fit_als(split.train, opt);
  BlockOptions bo;
  bo.train_tail = 3000;
  const auto exp = block_experiment(split, model, bo);
  REQUIRE(exp.blocks.size() == 4);
  const auto window_size = [](const RecalState& s) {
    return std::accumulate(s.bin_counts.begin(), s.bin_counts.end(), std::size_t{0});
  };
  CHECK(window_size(*exp.blocks[0].state) == 3000);
  for (std::size_t k = 1; k < 4; ++k) CHECK(window_size(*exp.blocks[k].state) == exp.blocks[k - 1].size);

  // The leaking variant is visible: each block's window is itself.
  bo.identity_window = true;
  const auto leak = block_experiment(split, model, bo);
  for (const auto& b : leak.blocks) CHECK(window_size(*b.state) == b.size);

  // Both gates see the same block at fraction zero.
  for (const auto& b : exp.blocks) CHECK(b.adaptive_curve->metric[0] == Approx(b.static_curve.metric[0]));

  bo.n_blocks = 1;
  bo.identity_window = false;
  const auto single = block_experiment(split, model, bo);
  CHECK(single.notices.size() == 1);
  CHECK_FALSE(single.blocks[0].adaptive_curve.has_value());
  bo.n_blocks = 6;
  CHECK_THROWS_AS(block_experiment(split, model, bo), InvalidArgument);
}

TEST_CASE("world spec parsing") {
  const auto spec = parse_world_spec("# comment\nn_users = 20\ndrift_sigma = 0.25  # trailing\n");
  CHECK(spec.n_users == 20);
  CHECK(spec.drift_sigma == 0.25);
  CHECK(spec.n_items == WorldSpec{}.n_items);
  const auto back = parse_world_spec(format_world_spec(spec));
  CHECK(format_world_spec(back) == format_world_spec(spec));
  CHECK_THROWS_AS(parse_world_spec("n_user = 3\n"), ParseError);
  CHECK_THROWS_AS(parse_world_spec("n_users 3\n"), ParseError);
  CHECK_THROWS_AS(parse_world_spec("max_count = 0\n"), Error);
}

TEST_CASE("random walk variance grows linearly with steps") {
  WorldSpec spec;
  spec.drift_sigma = 0.2;
  const auto world = generate(spec);
  const auto rows = world.drift.rows();
  const int last = spec.train_steps + spec.test_steps;
  const Eigen::VectorXd end = world.drift.col(last);
  const double var = (end.array() - end.mean()).square().sum() / static_cast<double>(rows - 1);
  CHECK(var == Approx(0.04 * last).epsilon(0.05));

  std::vector<double> gaps;
  for (std::size_t p = 0; p < world.pairs.size(); ++p) {
    const auto& pair = world.pairs[p];
    gaps.push_back(world.g(p, pair.test_step) - world.g(p, pair.train_step));
  }
  const double m = oracle::mean(gaps);
  double v = 0;
  for (double g : gaps) v += (g - m) * (g - m);
  v /= static_cast<double>(gaps.size() - 1);
  CHECK(v == Approx(analytic_regime(spec).drift_variance).epsilon(0.05));
}

TEST_CASE("synthetic worlds are deterministic and share structure across drift levels") {
  WorldSpec a;
  a.n_users = 60;
  a.n_items = 60;
  WorldSpec b = a;
  b.drift_sigma = 0.3;
  const auto wa = generate(a), wb = generate(b), wa2 = generate(a);
  for (std::size_t p = 0; p < wa.pairs.size(); p += 37) {
    CHECK(wa.pairs[p].f == wb.pairs[p].f);
    CHECK(wa.pairs[p].count == wb.pairs[p].count);
    CHECK(wa.pairs[p].test_value == wa2.pairs[p].test_value);
  }
  CHECK(wa.drift.isZero());

  // Per-pair estimate error scales as sigma_s / sqrt(k) with no drift.
  double weighted = 0;
  for (const auto& pair : wa.pairs) {
    const double e = pair.estimate() - pair.f;
    weighted += e * e * pair.count;
  }
  CHECK(weighted / static_cast<double>(wa.pairs.size()) == Approx(1.0).epsilon(0.1));
}

TEST_CASE("count signal weakens as drift grows") {
  WorldSpec spec;
  spec.n_users = 60;
  spec.n_items = 60;
  std::vector<double> rho;
  for (double sigma : {0.0, 0.05, 0.1, 0.2, 0.4}) {
    spec.drift_sigma = sigma;
    rho.push_back(evaluate_world(generate(spec), default_fractions()).count_spearman);
  }
  CHECK(rho.front() > 0.1);
  CHECK(rho.back() < rho.front() / 2);
  spec.drift_sigma = 0.0;
  CHECK_FALSE(analytic_regime(spec).contextual);
  spec.drift_sigma = 0.4;
  CHECK(analytic_regime(spec).contextual);
  CHECK_THROWS_AS(structural_experiment(spec, default_fractions()), InvalidArgument);
}

TEST_CASE("synthetic export is a valid temporal split") {
  WorldSpec spec;
  spec.n_users = 15;
  spec.n_items = 15;
  const auto world = generate(spec);
  const auto split = to_split(world);
  CHECK(check_split_invariants(split).empty());
  CHECK(split.test.size() == world.pairs.size());
  for (const auto& r : split.test) {
    CHECK(r.rating >= 1.0);
    CHECK(r.rating <= 5.0);
  }
}
