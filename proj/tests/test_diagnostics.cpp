#include <doctest.h>

#include <cmath>
#include <vector>

#include "gatecheck/diagnostics.hpp"
#include "gatecheck/error.hpp"
#include "gatecheck/rng.hpp"
#include "oracles.hpp"
#include "properties.hpp"

using namespace gatecheck;
using doctest::Approx;

TEST_CASE("monotone selective accuracy iff no tail inversion") {
  const auto sweep = props::tail_inversion_equivalence(2000, 101);
  CHECK(sweep.samples == 2000);
  CHECK(sweep.counterexamples == 0);
  // Both sides of the equivalence are exercised.
  CHECK(sweep.monotone > 100);
  CHECK(sweep.samples - sweep.monotone > 100);
}

TEST_CASE("decomposition identity holds to rounding") {
  CHECK(props::identity_max_residual(1000, 202) <= 1e-12);
  const std::vector<double> c{0.1, 0.5, 0.9}, a{1, 0, 1};
  CHECK_THROWS_AS(decomposition_identity_check(c, a, 0.5, 0.5), InvalidArgument);
  CHECK_THROWS_AS(decomposition_identity_check(c, a, 0.95, 0.99), InvalidArgument);
}

TEST_CASE("aligned confidence has no inversion under any binning") {
  CHECK(props::aligned_inversions(200, 303) == 0);
}

TEST_CASE("equal-width zones agree with a direct tail computation") {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 16 + rng.below(80);
    // Range [0, 16] with power-of-two bin counts keeps every edge exact.
    const std::size_t bins = std::size_t{1} << rng.below(5);
    std::vector<double> conf(n), q(n);
    for (std::size_t i = 0; i < n; ++i) {
      conf[i] = static_cast<double>(rng.below(17));
      q[i] = static_cast<double>(rng.below(2));
    }
    conf[0] = 0.0;
    conf[1] = 16.0;
    const auto report = check_c2(conf, q, bins);
    // Oracle: a zone inverts when its mean beats the mean of every case in a
    // strictly higher zone.
    const auto zone_of = [&](double c) {
      std::size_t found = 0;
      for (std::size_t z = 0; z < report.zones.size(); ++z) {
        if (report.zones[z].lower <= c) found = z;
      }
      return found;
    };
    std::vector<std::size_t> expected;
    for (std::size_t z = 0; z + 1 < report.zones.size(); ++z) {
      double s_in = 0, n_in = 0, s_up = 0, n_up = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto zi = zone_of(conf[i]);
        if (zi == z) {
          s_in += q[i];
          ++n_in;
        } else if (zi > z) {
          s_up += q[i];
          ++n_up;
        }
      }
      if (n_in > 0 && n_up > 0 && s_in * n_up > s_up * n_in) expected.push_back(z);
    }
    std::size_t total = 0;
    for (const auto& z : report.zones) total += z.count;
    CHECK(total == n);
    CHECK(report.tail_inversions == expected);
  }
}

TEST_CASE("c2 zone fixtures") {
  // Monotone rates across five zones.
  const std::vector<Zone> safe{{0.0, 0.2, 100, 0.231}, {0.2, 0.4, 100, 0.359}, {0.4, 0.6, 100, 0.648},
                               {0.6, 0.8, 100, 0.861}, {0.8, 1.0, 100, 0.939}};
  CHECK(check_c2_zones(safe).inversion_count() == 0);
  CHECK(check_c2_zones(safe, QualityMode::kError).inversion_count() == 4);

  std::vector<Zone> bad = safe;
  bad[1].mean_quality = 0.95;
  const auto r = check_c2_zones(bad);
  CHECK(r.tail_inversions == std::vector<std::size_t>{1});
  CHECK(r.adjacent_inversions.size() == 1);

  // An empty middle bin is folded into its right neighbour.
  const std::vector<double> c{0.0, 0.1, 0.9, 1.0}, q{0, 0, 1, 1};
  const auto folded = check_c2(c, q, 4);
  CHECK(folded.zones.size() == 2);
  CHECK(folded.merged_empty_bins == std::vector<std::size_t>{1, 2});
  CHECK(folded.zones[1].lower == Approx(0.25));
  // Constant confidence is a single zone.
  CHECK(check_c2(std::vector<double>{0.5, 0.5, 0.5}, std::vector<double>{1, 0, 1}, 2).zones.size() == 1);
}

TEST_CASE("abstention curve matches a full re-sort per fraction") {
  Rng rng(23);
  const auto fractions = default_fractions();
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + rng.below(500);
    std::vector<double> p(n), a(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(1, 5);
      a[i] = 1.0 + static_cast<double>(rng.below(5));
      c[i] = static_cast<double>(rng.below(7));  // heavy ties
    }
    const auto curve = abstention_curve(p, a, c, fractions);
    std::size_t violations = 0;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
      CHECK(curve.metric[k] == Approx(oracle::selective_rmse(p, a, c, fractions[k])).epsilon(1e-12));
      if (k > 0 && curve.metric[k] > curve.metric[k - 1]) ++violations;
    }
    CHECK(curve.violation_count == violations);
    CHECK(curve.coverage.front() == 1.0);
  }
}

TEST_CASE("abstention curve bookkeeping") {
  CHECK(abstained_count(0.05, 100) == 5);
  CHECK(abstained_count(0.15, 20) == 3);
  CHECK(abstention_order(std::vector<double>{2, 1, 2, 1}) == std::vector<std::size_t>{1, 3, 0, 2});

  // Squared errors by case; dropping case 0 (below average) raises the RMSE.
  const std::vector<std::size_t> order{0, 1, 2, 3};
  const std::vector<double> sq{1.0, 4.0, 0.0, 1.0};
  const std::vector<double> fr{0.0, 0.25, 0.5};
  const auto curve = curve_from_order(order, sq, fr, CurveMetric::kRmse);
  CHECK(curve.metric[0] == Approx(std::sqrt(6.0 / 4.0)));
  CHECK(curve.metric[1] == Approx(std::sqrt(5.0 / 3.0)));
  CHECK(curve.violation_steps == std::vector<std::size_t>{1});
  CHECK(curve.max_adverse_step == Approx(std::sqrt(5.0 / 3.0) - std::sqrt(1.5)));
  CHECK(curve.negligible_violations == 0);

  const auto acc = curve_from_order(order, std::vector<double>{1, 0, 1, 1}, fr, CurveMetric::kAccuracy);
  CHECK(acc.violation_count == 1);  // 0.75 -> 0.667

  CHECK_THROWS_AS(curve_from_order(order, sq, std::vector<double>{0.1, 0.2}, CurveMetric::kRmse), InvalidArgument);
  CHECK_THROWS_AS(curve_from_order(order, sq, std::vector<double>{0.0, 0.2, 0.2}, CurveMetric::kRmse),
                  InvalidArgument);
}

TEST_CASE("selective accuracy curve") {
  const std::vector<double> c{0.1, 0.4, 0.4, 0.8}, a{0, 1, 0, 1};
  const std::vector<double> t{0.0, 0.4, 0.9};
  const auto pts = selective_accuracy_curve(c, a, t);
  CHECK(pts[0].coverage == 1.0);
  CHECK(*pts[0].selective_accuracy == Approx(0.5));
  CHECK(pts[1].retained == 3);
  CHECK(*pts[1].selective_accuracy == Approx(2.0 / 3.0));
  CHECK_FALSE(pts[2].selective_accuracy.has_value());
}

TEST_CASE("ece fixtures and bin oracle") {
  // Perfectly calibrated: each occupied bin's accuracy equals its confidence.
  std::vector<double> cc, aa;
  for (int j = 0; j < 4; ++j) {
    cc.push_back(0.25);
    aa.push_back(j == 0 ? 1.0 : 0.0);
    cc.push_back(0.75);
    aa.push_back(j == 0 ? 0.0 : 1.0);
  }
  CHECK(ece(cc, aa).ece == Approx(0.0).epsilon(1e-15));
  const std::vector<double> ones(8, 1.0), zeros(8, 0.0);
  CHECK(ece(ones, zeros).ece == Approx(1.0));
  CHECK(ece(zeros, ones).ece == Approx(1.0));

  // Direct bin-by-bin computation.
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<double> conf(n), acc(n);
    for (std::size_t i = 0; i < n; ++i) {
      conf[i] = rng.below(10) == 0 ? 1.0 : rng.uniform();
      acc[i] = static_cast<double>(rng.below(2));
    }
    double expected = 0;
    for (int b = 0; b < 10; ++b) {
      double sc = 0, sa = 0, m = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const int bin = conf[i] >= 1.0 ? 9 : static_cast<int>(conf[i] * 10);
        if (bin != b) continue;
        sc += conf[i];
        sa += acc[i];
        ++m;
      }
      if (m > 0) expected += m / static_cast<double>(n) * std::abs(sc / m - sa / m);
    }
    CHECK(ece(conf, acc).ece == Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("tier report") {
  // HIGH 4.4%, MED 0.9%, LOW 0.2% on 1000 cases each.
  std::vector<Tier> tiers;
  std::vector<double> y;
  const auto add = [&](Tier t, int n, int pos) {
    for (int i = 0; i < n; ++i) {
      tiers.push_back(t);
      y.push_back(i < pos ? 1.0 : 0.0);
    }
  };
  add(Tier::kHigh, 1000, 44);
  add(Tier::kMed, 1000, 9);
  add(Tier::kLow, 1000, 2);
  const auto r = tier_report(tiers, y);
  REQUIRE(r.high_over_med_lift.has_value());
  CHECK(*r.high_over_med_lift == Approx(4.89).epsilon(0.01 / 4.89));
  CHECK(r.monotonic);
  REQUIRE(r.chi_squared.has_value());
  CHECK(r.chi_squared->p_value < 1e-6);

  // LOW beating MED breaks monotonicity.
  tiers.clear();
  y.clear();
  add(Tier::kHigh, 1000, 100);
  add(Tier::kMed, 1000, 69);
  add(Tier::kLow, 1000, 93);
  CHECK_FALSE(tier_report(tiers, y).monotonic);

  // Missing MED leaves the lift undefined with a reason.
  tiers.clear();
  y.clear();
  add(Tier::kHigh, 10, 3);
  add(Tier::kLow, 10, 1);
  const auto partial = tier_report(tiers, y);
  CHECK_FALSE(partial.high_over_med_lift.has_value());
  CHECK(partial.lift_note == "MED tier empty");
  CHECK(partial.monotonic);

  CHECK(parse_tier("MEDIUM") == Tier::kMed);
  CHECK_THROWS_AS(parse_tier("TOP"), InvalidArgument);
}

TEST_CASE("c1 alignment and accuracy proxy") {
  const std::vector<double> p{3.0, 4.0, 2.0, 5.0}, a{3.5, 2.5, 2.0, 4.0};
  CHECK(accuracy_indicator(p, a) == std::vector<double>{1, 0, 1, 1});
  std::vector<double> c, acc;
  Rng rng(41);
  for (int i = 0; i < 2000; ++i) {
    const double conf = rng.uniform();
    c.push_back(conf);
    acc.push_back(rng.uniform() < 0.3 + 0.4 * conf ? 1.0 : 0.0);
  }
  const auto r = check_c1(c, acc);
  CHECK(r.pass);
  CHECK(r.spearman.statistic == Approx(oracle::spearman(c, acc)).epsilon(1e-10));
  for (auto& v : c) v = -v;
  CHECK_FALSE(check_c1(c, acc).pass);
}

TEST_CASE("variance decomposition") {
  Rng rng(51);
  const int n = 400;
  Eigen::MatrixXd s(n, 1), x(n, 1);
  std::vector<double> conf(n);
  for (int i = 0; i < n; ++i) {
    s(i, 0) = rng.normal();
    x(i, 0) = rng.normal();
    conf[i] = 2.0 * s(i, 0) + 0.1 * x(i, 0) + 0.1 * rng.normal();
  }
  const auto v = variance_decomposition(conf, s, x);
  REQUIRE(v.structural_fraction.has_value());
  CHECK(*v.structural_fraction > 0.95);
  CHECK(*v.structural_fraction == Approx(v.r2_structural / (v.r2_structural + v.r2_contextual)));
}
