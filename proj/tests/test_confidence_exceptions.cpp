#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "gatecheck/confidence.hpp"
#include "gatecheck/error.hpp"
#include "gatecheck/exception_lab.hpp"
#include "gatecheck/stats.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gatecheck;
using doctest::Approx;

namespace {

constexpr std::int64_t kDay = 86400;

SplitDataset hand_split(SplitKind kind) {
  SplitDataset s;
  s.spec.kind = kind;
  s.train = {{1, 10, 4, 0}, {1, 11, 3, 1 * kDay}, {2, 10, 5, 2 * kDay}, {1, 12, 2, 3 * kDay}};
  s.test = {{2, 11, 4, 10 * kDay}, {3, 10, 3, 11 * kDay}, {1, 13, 5, 40 * kDay}};
  for (const auto& r : s.train) {
    ++s.user_counts[r.user_id];
    ++s.item_counts[r.item_id];
  }
  return s;
}

}  // namespace

TEST_CASE("structural counts per split kind") {
  const auto t = hand_split(SplitKind::kTemporal);
  // user 2 has 1, item 11 has 1; user 3 has 0; item 13 has 0.
  CHECK(structural_counts(t, t.test) == std::vector<double>{1, 0, 0});
  const auto cu = hand_split(SplitKind::kColdUser);
  CHECK(structural_counts(cu, cu.test) == std::vector<double>{1, 2, 0});
  const auto ci = hand_split(SplitKind::kColdItem);
  CHECK(structural_counts(ci, ci.test) == std::vector<double>{1, 0, 3});

  CHECK(min_max_normalize(std::vector<double>{2, 4, 3}) == std::vector<double>{0, 1, 0.5});
  SplitDataset flat = hand_split(SplitKind::kTemporal);
  flat.test = {{5, 50, 3, 0}, {6, 60, 3, 0}};
  CHECK(count_confidence(flat).warnings.size() == 1);
}

TEST_CASE("recency features against hand-computed gaps") {
  const auto s = hand_split(SplitKind::kTemporal);
  const auto f = recency_features(s, 30.0);
  // Case 0: user 2 last seen day 2, item 11 last seen day 1.
  CHECK(f.user_gap[0] == 8.0 * kDay);
  CHECK(f.item_gap[0] == 9.0 * kDay);
  CHECK(f.user_velocity[0] == Approx(1.0 / 30.0));
  // Case 1: user 3 unseen; item 10 last seen day 2.
  CHECK(f.user_never[1] == 1);
  CHECK(f.user_gap[1] == 0.0);
  CHECK(f.item_gap[1] == 9.0 * kDay);
  CHECK(f.item_velocity[1] == Approx(2.0 / 30.0));
  // Case 2: user 1 last seen day 3; the day-0/1/3 events fall outside [10, 40).
  CHECK(f.user_gap[2] == 37.0 * kDay);
  CHECK(f.user_velocity[2] == 0.0);
  CHECK(f.item_never[2] == 1);
  const auto d = f.design();
  CHECK(d.cols() == 6);
  CHECK(d(0, 0) == Approx(std::log1p(8.0)));
}

TEST_CASE("recency history counts earlier test events but never the case itself") {
  SplitDataset s = hand_split(SplitKind::kTemporal);
  s.test.push_back({2, 14, 1, 12 * kDay});
  const auto f = recency_features(s);
  // The day-10 test event of user 2 is history for the day-12 case.
  CHECK(f.user_gap[3] == 2.0 * kDay);
  CHECK(f.user_velocity[3] == Approx(2.0 / 30.0));
}

TEST_CASE("member disagreement is the population standard deviation") {
  const std::vector<std::vector<double>> m{{1.0, 3.0}, {3.0, 3.0}, {2.0, 3.0}};
  const auto sd = member_std(m);
  CHECK(sd[0] == Approx(std::sqrt(2.0 / 3.0)));
  CHECK(sd[1] == 0.0);
  CHECK_THROWS_AS(member_std({{1.0}}), InvalidArgument);
}

TEST_CASE("ensemble confidence") {
  const auto records = testutil::toy_ratings(40, 30, 1200, 8);
  const auto split = make_split(records, {SplitKind::kTemporal, 0.2, 42});
  AlsOptions opt;
  opt.rank = 3;
  opt.iterations = 3;
  const std::vector<std::uint64_t> same{7, 7, 7};
  const auto degenerate = ensemble_confidence(split, opt, same);
  CHECK(std::all_of(degenerate.member_std.begin(), degenerate.member_std.end(), [](double v) { return v == 0.0; }));

  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto a = ensemble_confidence(split, opt, seeds);
  const auto b = ensemble_confidence(split, opt, seeds);
  CHECK(a.signal.scores == b.signal.scores);
  for (std::size_t i = 0; i < a.signal.scores.size(); ++i) CHECK(a.signal.scores[i] == -a.member_std[i]);
  // Mean of members, recomputed.
  std::vector<std::vector<double>> members;
  for (auto seed : seeds) {
    auto o = opt;
    o.seed = seed;
    members.push_back(predict_all(fit_als(split.train, o), split.test));
  }
  for (std::size_t i = 0; i < a.mean_prediction.size(); i += 17) {
    CHECK(a.mean_prediction[i] == Approx((members[0][i] + members[1][i] + members[2][i]) / 3.0));
  }
}

TEST_CASE("half split partitions the cases") {
  const auto h = half_split(101, 42);
  CHECK(h.fit.size() == 50);
  CHECK(h.eval.size() == 51);
  std::set<std::size_t> all(h.fit.begin(), h.fit.end());
  all.insert(h.eval.begin(), h.eval.end());
  CHECK(all.size() == 101);
  CHECK(std::is_sorted(h.fit.begin(), h.fit.end()));
  CHECK(half_split(101, 42).fit == h.fit);
  CHECK(half_split(101, 43).fit != h.fit);
}

TEST_CASE("learned confidence scores only the evaluation half") {
  Rng rng(12);
  const std::size_t n = 400;
  Eigen::MatrixXd x(n, 2);
  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.normal();
    x(static_cast<Eigen::Index>(i), 0) = a;
    x(static_cast<Eigen::Index>(i), 1) = 1.0;  // constant column
    err[i] = 3.0 + a + 0.3 * rng.normal();
  }
  const auto lc = learned_confidence(SignalKind::kResidualPredicted, x, err, {});
  CHECK(lc.signal.cases == lc.halves.eval);
  CHECK(lc.signal.warnings.size() == 1);
  std::vector<double> fit_err;
  for (auto i : lc.halves.fit) fit_err.push_back(err[i]);
  CHECK(lc.label_threshold == Approx(oracle::quantile_type7(fit_err, 0.5)));
  for (std::size_t k = 0; k < lc.signal.cases.size(); k += 13) {
    const auto row = x.row(static_cast<Eigen::Index>(lc.signal.cases[k]));
    CHECK(lc.signal.scores[k] == Approx(1.0 - lc.model.probability(row)));
  }
  // Error grows with a, so confidence must fall with it.
  std::vector<double> mag, score;
  for (std::size_t k = 0; k < lc.signal.cases.size(); ++k) {
    mag.push_back(x(static_cast<Eigen::Index>(lc.signal.cases[k]), 0));
    score.push_back(lc.signal.scores[k]);
  }
  CHECK(oracle::spearman(mag, score) == Approx(-1.0));

  const std::vector<double> flat(n, 0.5);
  CHECK_THROWS_AS(learned_confidence(SignalKind::kRecency, x, flat, {}), DegenerateInput);
}

TEST_CASE("random control and dense layout") {
  const auto a = random_confidence(50, 9);
  CHECK(a.scores == random_confidence(50, 9).scores);
  CHECK(a.scores != random_confidence(50, 10).scores);
  ConfidenceSignal s;
  s.cases = {2, 0};
  s.scores = {0.7, 0.1};
  const auto d = dense_scores(s, 3);
  CHECK(d[0] == 0.1);
  CHECK(std::isnan(d[1]));
  CHECK(d[2] == 0.7);
  CHECK(parse_signal_kind(to_string(SignalKind::kCombinedStructRecency)) == SignalKind::kCombinedStructRecency);
  CHECK_THROWS_AS(parse_signal_kind("psychic"), InvalidArgument);
}

TEST_CASE("exception labels use the training 95th percentile") {
  std::vector<double> train, test;
  for (int i = 1; i <= 100; ++i) train.push_back(i % 2 ? i / 10.0 : -i / 10.0);
  for (int i = 0; i < 20; ++i) test.push_back(i < 5 ? 20.0 : 0.1);
  const auto l = label_exceptions(train, test);
  std::vector<double> abs_train;
  for (double r : train) abs_train.push_back(std::abs(r));
  CHECK(l.tau == Approx(oracle::quantile_type7(abs_train, 0.95)));
  CHECK(l.train_rate == Approx(0.05));
  CHECK(l.test_rate == Approx(0.25));
  CHECK(l.test[0] == 1);
  CHECK(l.test[19] == 0);

  const auto shift = residual_shift_test(train, test);
  std::vector<double> abs_test;
  for (double r : test) abs_test.push_back(std::abs(r));
  CHECK(shift.statistic == Approx(oracle::ks_stat(abs_train, abs_test)));
}

TEST_CASE("fp/fn ratio at inclusive thresholds") {
  const std::vector<double> pred{4.0, 3.6, 3.4, 4.6, 2.0, 3.5};
  const std::vector<double> act{3.0, 4.0, 4.0, 5.0, 1.0, 3.5};
  const auto rows = fp_fn_ratio(pred, act, default_binarization_thresholds());
  REQUIRE(rows.size() == 3);
  // tau 3.5: pred+ {0,1,3,5}, act+ {1,2,3,5}
  CHECK(rows[0].tp == 3);
  CHECK(rows[0].fp == 1);
  CHECK(rows[0].fn == 1);
  CHECK(rows[0].tn == 1);
  CHECK(*rows[0].ratio == 1.0);
  // tau 4.5: pred+ {3}, act+ {3}; no false negatives
  CHECK(rows[2].tp == 1);
  CHECK_FALSE(rows[2].ratio.has_value());
}

TEST_CASE("exception classifier auc matches the pairwise oracle") {
  const auto records = testutil::toy_ratings(60, 40, 3000, 10);
  const auto split = make_split(records, {SplitKind::kColdUser, 0.2, 42});
  AlsOptions opt;
  opt.rank = 3;
  opt.iterations = 5;
  const auto model = fit_als(split.train, opt);
  const auto rep = exception_report(split, model);
  CHECK(rep.classifier.auc_train > 0.0);
  CHECK(rep.classifier.auc_train <= 1.0);
  // Rebuild the training-side scores from the fitted model.
  const auto counts = structural_counts(split, split.train);
  const auto pred = predict_all(model, split.train);
  std::vector<double> scores;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    Eigen::RowVectorXd row(3);
    row << pred[i], pred[i] * pred[i], counts[i];
    scores.push_back(rep.classifier.model.probability(row));
  }
  CHECK(rep.classifier.auc_train == Approx(oracle::auc(scores, rep.labels.train)).epsilon(1e-12));
}
