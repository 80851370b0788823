#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "gatecheck/backbone.hpp"
#include "gatecheck/dataset.hpp"
#include "gatecheck/error.hpp"
#include "gatecheck/rng.hpp"
#include "test_util.hpp"

using namespace gatecheck;
using doctest::Approx;

TEST_CASE("movielens parser accepts well-formed lines") {
  const auto r = parse_movielens("196\t242\t3\t881250949\n186\t302\t3\t891717742\n\n");
  REQUIRE(r.size() == 2);
  CHECK(r[0].user_id == 196);
  CHECK(r[0].item_id == 242);
  CHECK(r[0].rating == 3.0);
  CHECK(r[1].timestamp == 891717742);
}

TEST_CASE("movielens parser reports the offending line") {
  const auto line_of = [](const char* text) {
    try {
      parse_movielens(text, "u.data");
    } catch (const ParseError& e) {
      CHECK(e.path() == "u.data");
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("1\t2\t3\t4\n1\t2\t3\n") == 2);
  CHECK(line_of("1\t2\t6\t4\n") == 1);
  CHECK(line_of("1\t2\t0.5\t4\n") == 1);
  CHECK(line_of("x\t2\t3\t4\n") == 1);
  CHECK(line_of("1\t2\t3\t4\n1\t2\t3\t-5\n") == 2);
}

TEST_CASE("outcome stream parser") {
  const auto s = parse_outcome_stream("confidence,outcome,tier\n0.9,1,HIGH\n0.2,0,LOW\n");
  REQUIRE(s.size() == 2);
  CHECK(*s[0].tier == "HIGH");
  CHECK_THROWS_AS(parse_outcome_stream("conf,outcome\n0.1,1\n"), ParseError);
  CHECK_THROWS_AS(parse_outcome_stream("confidence,outcome\n1.5,1\n"), ParseError);
  CHECK_THROWS_AS(parse_outcome_stream("confidence,outcome,tier\n0.5,1,TOP\n"), ParseError);
}

TEST_CASE("splits satisfy their invariants") {
  const auto records = testutil::toy_ratings(60, 40, 2000, 1);
  for (auto kind : {SplitKind::kTemporal, SplitKind::kColdUser, SplitKind::kColdItem}) {
    CAPTURE(to_string(kind));
    const auto split = make_split(records, {kind, 0.2, 42});
    CHECK(check_split_invariants(split).empty());
    CHECK(split.train.size() + split.test.size() == records.size());
    // Same input, same split.
    const auto again = make_split(records, {kind, 0.2, 42});
    CHECK(again.test == split.test);
  }
  const auto temporal = make_split(records, {SplitKind::kTemporal, 0.2, 42});
  CHECK(temporal.test.size() == 400);
}

TEST_CASE("temporal boundary ties are cut by user then item") {
  std::vector<RatingRecord> r;
  for (EntityId u = 5; u >= 1; --u) r.push_back({u, 10 - u, 3.0, 100});
  const auto split = make_split(r, {SplitKind::kTemporal, 0.4, 1});
  REQUIRE(split.test.size() == 2);
  CHECK(split.test[0].user_id == 4);
  CHECK(split.test[1].user_id == 5);
}

TEST_CASE("invariant checker flags a leaked cold user") {
  const auto records = testutil::toy_ratings(30, 20, 600, 2);
  auto split = make_split(records, {SplitKind::kColdUser, 0.2, 42});
  ++split.user_counts[split.test.front().user_id];
  CHECK(check_split_invariants(split).size() == 1);
}

TEST_CASE("als objective never increases and the last item solve is exact") {
  const auto records = testutil::toy_ratings(40, 30, 900, 3);
  AlsOptions opt;
  opt.rank = 3;
  opt.lambda = 0.1;
  opt.iterations = 6;
  AlsTrace trace;
  const auto model = fit_als(records, opt, &trace);
  REQUIRE(trace.objective.size() == 13);
  for (std::size_t k = 1; k < trace.objective.size(); ++k) {
    CHECK(trace.objective[k] <= trace.objective[k - 1] + 1e-9);
  }
  CHECK(als_objective(model, records) == Approx(trace.objective.back()).epsilon(1e-10));

  // Closed-form ridge solution for every item given the final user side.
  std::map<EntityId, std::vector<const RatingRecord*>> by_item;
  for (const auto& r : records) by_item[r.item_id].push_back(&r);
  for (const auto& [item, rows] : by_item) {
    const int d = opt.rank + 1;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    for (const auto* r : rows) {
      Eigen::VectorXd x(d);
      x << model.user_factors.at(r->user_id), 1.0;
      a += x * x.transpose();
      b += x * (r->rating - model.global_mean - model.user_bias.at(r->user_id));
    }
    a.diagonal().array() += opt.lambda * static_cast<double>(rows.size());
    const Eigen::VectorXd sol = a.colPivHouseholderQr().solve(b);
    for (int f = 0; f < opt.rank; ++f) CHECK(model.item_factors.at(item)[f] == Approx(sol[f]).epsilon(1e-8));
    CHECK(model.item_bias.at(item) == Approx(sol[opt.rank]).epsilon(1e-8));
  }
}

TEST_CASE("als is reproducible and seed-sensitive") {
  const auto records = testutil::toy_ratings(20, 20, 300, 4);
  AlsOptions opt;
  opt.rank = 2;
  opt.iterations = 3;
  const auto a = fit_als(records, opt);
  const auto b = fit_als(records, opt);
  opt.seed = 43;
  const auto c = fit_als(records, opt);
  const auto& r = records.front();
  CHECK(a.raw_score(r.user_id, r.item_id) == b.raw_score(r.user_id, r.item_id));
  CHECK(a.raw_score(r.user_id, r.item_id) != c.raw_score(r.user_id, r.item_id));
}

TEST_CASE("cold entities fall back to mean plus the known bias; predictions are clipped") {
  const auto records = testutil::toy_ratings(20, 20, 300, 5);
  AlsOptions opt;
  opt.rank = 2;
  opt.iterations = 2;
  auto model = fit_als(records, opt);
  const EntityId item = records.front().item_id;
  CHECK(model.raw_score(9999, item) == Approx(model.global_mean + model.item_bias.at(item)));
  CHECK(model.raw_score(9999, 9999) == model.global_mean);
  model.global_mean = 40.0;
  CHECK(model.predict(9999, 9999) == 5.0);
  model.global_mean = -40.0;
  CHECK(model.predict(9999, 9999) == 1.0);
}

TEST_CASE("baselines and rmse") {
  const std::vector<RatingRecord> r{{1, 1, 4, 0}, {1, 2, 2, 1}, {2, 1, 5, 2}};
  const auto g = fit_baseline(r, BaselineKind::kGlobalMean);
  const auto u = fit_baseline(r, BaselineKind::kUserMean);
  const auto i = fit_baseline(r, BaselineKind::kItemMean);
  CHECK(g.predict(7, 7) == Approx(11.0 / 3.0));
  CHECK(u.predict(1, 9) == Approx(3.0));
  CHECK(u.predict(3, 1) == Approx(11.0 / 3.0));
  CHECK(i.predict(9, 1) == Approx(4.5));
  const std::vector<double> p{1, 2, 3}, a{1, 4, 3};
  CHECK(rmse(p, a) == Approx(std::sqrt(4.0 / 3.0)));
}

TEST_CASE("model save/load round trip is exact") {
  const auto records = testutil::toy_ratings(25, 15, 300, 6);
  AlsOptions opt;
  opt.rank = 4;
  opt.iterations = 3;
  const auto model = fit_als(records, opt);
  const auto path = testutil::temp_path("model.txt");
  save_model(path, model);
  const auto back = load_model(path);
  CHECK(back.rank == model.rank);
  for (const auto& r : records) CHECK(back.raw_score(r.user_id, r.item_id) == model.raw_score(r.user_id, r.item_id));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_model(path), Error);
}
