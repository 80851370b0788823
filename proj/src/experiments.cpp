#include "gatecheck/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "gatecheck/error.hpp"

#ifndef GATECHECK_DEFAULT_DATA_DIR
#define GATECHECK_DEFAULT_DATA_DIR "data"
#endif

namespace gatecheck {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw InvalidArgument("config " + path_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw InvalidArgument("config " + where(key) + ": " + e.what());
    }
  }

  std::optional<Reader> child(const std::string& key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return std::nullopt;
    return Reader(*it, where(key));
  }

  void finish() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.count(item.key())) throw InvalidArgument("unknown config key '" + where(item.key()) + "'");
    }
  }

 private:
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string percent_label(double fraction) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, std::round(fraction * 1e6) / 1e4);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("?");
}

std::vector<std::string> curve_columns(const std::vector<double>& fractions) {
  std::vector<std::string> cols;
  for (double f : fractions) cols.push_back("rmse_at_" + percent_label(f) + "pct");
  return cols;
}

std::optional<double> value_at(const AbstentionCurve& curve, double fraction) {
  for (std::size_t k = 0; k < curve.fractions.size(); ++k) {
    if (std::abs(curve.fractions[k] - fraction) < 1e-12) return curve.metric[k];
  }
  return std::nullopt;
}

void append_curve(std::vector<Cell>& row, const AbstentionCurve& curve) {
  for (double m : curve.metric) row.push_back(m);
  row.push_back(cell(curve.violation_count));
  row.push_back(cell(curve.negligible_violations));
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

std::string sci(double v) {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific << v;
  return out.str();
}

void check_curve_invariants(const AbstentionCurve& curve, double full_metric, const std::string& label,
                            std::vector<std::string>& failures) {
  if (std::abs(curve.metric.front() - full_metric) > 1e-12) {
    failures.push_back(label + ": curve at fraction 0 differs from the full-set metric");
  }
  for (std::size_t k = 1; k < curve.coverage.size(); ++k) {
    if (!(curve.coverage[k] < curve.coverage[k - 1])) {
      failures.push_back(label + ": coverage is not strictly decreasing");
      break;
    }
  }
}

struct ScoredCases {
  ConfidenceSignal signal;
  std::vector<double> predicted;
  std::vector<double> actual;
  std::string scope;
};

ScoredCases score_cases(const SplitRun& run, SignalKind kind, const ExperimentConfig& config) {
  ScoredCases out;
  out.scope = "all";
  out.predicted = run.predictions;
  out.actual = run.actual;
  const auto take_learned = [&](LearnedConfidence learned) {
    out.scope = "eval_half";
    out.predicted.clear();
    out.actual.clear();
    for (auto i : learned.signal.cases) {
      out.predicted.push_back(run.predictions[i]);
      out.actual.push_back(run.actual[i]);
    }
    out.signal = std::move(learned.signal);
  };
  switch (kind) {
    case SignalKind::kCountBased:
      out.signal = count_confidence(run.split);
      break;
    case SignalKind::kRandomControl:
      out.signal = random_confidence(run.split.test.size(), config.random_seed);
      break;
    case SignalKind::kEnsemble: {
      auto ensemble = ensemble_confidence(run.split, config.backbone, config.ensemble_seeds);
      out.predicted = std::move(ensemble.mean_prediction);
      out.signal = std::move(ensemble.signal);
      break;
    }
    case SignalKind::kRecency:
      take_learned(recency_confidence(run.split, run.predictions, config.learned));
      break;
    case SignalKind::kResidualPredicted:
      take_learned(residual_predicted_confidence(run.split, run.predictions, config.learned));
      break;
    case SignalKind::kCombinedStructRecency:
      take_learned(combined_confidence(run.split, run.predictions, config.learned));
      break;
  }
  return out;
}

void add_header(Report& report, const ExperimentConfig& config) {
  report.config = to_json(config);
  report.seeds = config.all_seeds();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::vector<std::uint64_t> ExperimentConfig::all_seeds() const {
  std::vector<std::uint64_t> seeds = {split_seed, backbone.seed, random_seed, learned.seed};
  seeds.insert(seeds.end(), ensemble_seeds.begin(), ensemble_seeds.end());
  return seeds;
}

void ExperimentConfig::reseed(std::uint64_t seed) {
  split_seed = seed;
  backbone.seed = seed;
  random_seed = seed;
  learned.seed = seed;
  const std::size_t members = std::max<std::size_t>(ensemble_seeds.size(), 2);
  ensemble_seeds.clear();
  for (std::size_t k = 0; k < members; ++k) ensemble_seeds.push_back(seed + k);
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig c;
  Reader root(doc, "");
  int version = kConfigSchemaVersion;
  root.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw InvalidArgument("config schema_version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kConfigSchemaVersion) + ")");
  }
  if (auto r = root.child("dataset")) {
    r->get("path", c.dataset_path);
    r->get("synthetic_spec", c.synthetic_spec);
    r->finish();
  }
  if (auto r = root.child("split")) {
    std::vector<std::string> kinds;
    r->get("kinds", kinds);
    if (!kinds.empty()) {
      c.splits.clear();
      for (const auto& k : kinds) c.splits.push_back(parse_split_kind(k));
    }
    r->get("test_fraction", c.test_fraction);
    r->get("seed", c.split_seed);
    r->finish();
  }
  if (auto r = root.child("backbone")) {
    r->get("rank", c.backbone.rank);
    r->get("lambda", c.backbone.lambda);
    r->get("iterations", c.backbone.iterations);
    r->get("seed", c.backbone.seed);
    r->finish();
  }
  if (auto r = root.child("confidence")) {
    std::vector<std::string> kinds;
    r->get("kinds", kinds);
    if (!kinds.empty()) {
      c.confidence_kinds.clear();
      for (const auto& k : kinds) c.confidence_kinds.push_back(parse_signal_kind(k));
    }
    r->get("ensemble_seeds", c.ensemble_seeds);
    r->get("random_seed", c.random_seed);
    r->get("half_split_seed", c.learned.seed);
    r->get("l2", c.learned.l2);
    r->get("window_days", c.learned.window_days);
    r->finish();
  }
  if (auto r = root.child("abstention")) {
    r->get("fractions", c.fractions);
    r->get("negligible_step", c.negligible_step);
    r->finish();
  }
  if (auto r = root.child("diagnostics")) {
    r->get("c2_bins", c.c2_bins);
    r->get("accuracy_tolerance", c.accuracy_tolerance);
    r->get("c1_min_rho", c.c1.min_rho);
    r->get("c1_max_p", c.c1.max_p);
    r->finish();
  }
  if (auto r = root.child("adaptive")) {
    r->get("n_blocks", c.blocks.n_blocks);
    r->get("n_bins", c.blocks.n_bins);
    r->get("alpha", c.blocks.alpha);
    r->get("train_tail", c.blocks.train_tail);
    r->finish();
  }
  root.get("output_dir", c.output_dir);
  root.finish();

  if (!c.dataset_path.empty() && !c.synthetic_spec.empty()) {
    throw InvalidArgument("config: dataset.path and dataset.synthetic_spec are mutually exclusive");
  }
  if (c.splits.empty()) throw InvalidArgument("config: split.kinds must not be empty");
  if (c.ensemble_seeds.size() < 2) throw InvalidArgument("config: confidence.ensemble_seeds needs two or more seeds");
  if (c.fractions.empty() || c.fractions.front() != 0.0) {
    throw InvalidArgument("config: abstention.fractions must start at 0");
  }
  if (c.backbone.rank < 1 || c.backbone.iterations < 1 || !(c.backbone.lambda >= 0.0)) {
    throw InvalidArgument("config: backbone needs rank >= 1, iterations >= 1, lambda >= 0");
  }
  c.blocks.fractions = c.fractions;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  return parse_config(doc);
}

json to_json(const ExperimentConfig& c) {
  std::vector<std::string> splits, kinds;
  for (auto k : c.splits) splits.emplace_back(to_string(k));
  for (auto k : c.confidence_kinds) kinds.emplace_back(to_string(k));
  return {
      {"schema_version", kConfigSchemaVersion},
      {"dataset", {{"path", c.dataset_path}, {"synthetic_spec", c.synthetic_spec}}},
      {"split", {{"kinds", splits}, {"test_fraction", c.test_fraction}, {"seed", c.split_seed}}},
      {"backbone",
       {{"rank", c.backbone.rank},
        {"lambda", c.backbone.lambda},
        {"iterations", c.backbone.iterations},
        {"seed", c.backbone.seed}}},
      {"confidence",
       {{"kinds", kinds},
        {"ensemble_seeds", c.ensemble_seeds},
        {"random_seed", c.random_seed},
        {"half_split_seed", c.learned.seed},
        {"l2", c.learned.l2},
        {"window_days", c.learned.window_days}}},
      {"abstention", {{"fractions", c.fractions}, {"negligible_step", c.negligible_step}}},
      {"diagnostics",
       {{"c2_bins", c.c2_bins},
        {"accuracy_tolerance", c.accuracy_tolerance},
        {"c1_min_rho", c.c1.min_rho},
        {"c1_max_p", c.c1.max_p}}},
      {"adaptive",
       {{"n_blocks", c.blocks.n_blocks},
        {"n_bins", c.blocks.n_bins},
        {"alpha", c.blocks.alpha},
        {"train_tail", c.blocks.train_tail}}},
      {"output_dir", c.output_dir},
  };
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("GATECHECK_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return GATECHECK_DEFAULT_DATA_DIR;
}

std::vector<RatingRecord> load_ratings(const ExperimentConfig& config) {
  if (!config.synthetic_spec.empty()) {
    const auto split = to_split(generate(load_world_spec(config.synthetic_spec)));
    std::vector<RatingRecord> records = split.train;
    records.insert(records.end(), split.test.begin(), split.test.end());
    return records;
  }
  const std::filesystem::path path =
      config.dataset_path.empty() ? default_data_dir() / "ml-100k" / "u.data" : std::filesystem::path(config.dataset_path);
  if (!std::filesystem::exists(path)) {
    throw Error("dataset not found at " + path.string() +
                " (set GATECHECK_DATA_DIR or dataset.path; tools/fetch_movielens.sh downloads it)");
  }
  return load_movielens(path);
}

// ---------------------------------------------------------------------------
// Per-split pipeline

SplitRun prepare_split(const std::vector<RatingRecord>& records, SplitKind kind, const ExperimentConfig& config) {
  SplitRun run;
  run.split = make_split(records, {kind, config.test_fraction, config.split_seed});
  run.model = fit_als(run.split.train, config.backbone);
  run.predictions = predict_all(run.model, run.split.test);
  run.actual = actual_ratings(run.split.test);
  return run;
}

SplitSummary summarize_split(const SplitRun& run, const ExperimentConfig& config,
                             std::vector<std::string>& invariant_failures) {
  const auto& split = run.split;
  const std::string label(to_string(split.spec.kind));
  SplitSummary s;
  s.kind = split.spec.kind;
  s.n_train = split.train.size();
  s.n_test = split.test.size();
  for (const auto& f : check_split_invariants(split)) invariant_failures.push_back(label + ": " + f);

  s.rmse_global = rmse(predict_all(fit_baseline(split.train, BaselineKind::kGlobalMean), split.test), run.actual);
  s.rmse_user = rmse(predict_all(fit_baseline(split.train, BaselineKind::kUserMean), split.test), run.actual);
  s.rmse_item = rmse(predict_all(fit_baseline(split.train, BaselineKind::kItemMean), split.test), run.actual);
  s.rmse_mf = rmse(run.predictions, run.actual);

  const auto exceptions = exception_report(split, run.model);
  s.tau = exceptions.labels.tau;
  s.train_exception_rate = exceptions.labels.train_rate;
  s.test_exception_rate = exceptions.labels.test_rate;
  s.ks = exceptions.shift;
  s.auc_train = exceptions.classifier.auc_train;
  s.auc_test = exceptions.classifier.auc_test;
  s.fp_fn = fp_fn_ratio(run.predictions, run.actual, default_binarization_thresholds());
  for (const auto& row : s.fp_fn) {
    if (row.fp + row.tn + row.tp + row.fn != run.actual.size()) {
      invariant_failures.push_back(label + ": FP/FN confusion counts do not cover the test set");
    }
  }

  const auto count = count_confidence(split);
  s.warnings = count.warnings;
  s.count_curve = abstention_curve(run.predictions, run.actual, count.scores, config.fractions, config.negligible_step);
  check_curve_invariants(s.count_curve, s.rmse_mf, label + " count-based", invariant_failures);

  const auto accuracy = accuracy_indicator(run.predictions, run.actual, config.accuracy_tolerance);
  try {
    s.c1 = check_c1(count.scores, accuracy, config.c1);
  } catch (const DegenerateInput& e) {
    s.warnings.push_back(label + ": C1 undefined: " + e.what());
  }
  const double t1 = stats::quantile(count.scores, 0.25);
  const double t2 = stats::quantile(count.scores, 0.75);
  if (t1 < t2) {
    const double residual = decomposition_identity_check(count.scores, accuracy, t1, t2);
    if (residual > 1e-12) {
      invariant_failures.push_back(label + ": selective-accuracy decomposition residual " + sci(residual));
    }
  }
  return s;
}

SignalCurve signal_curve(const SplitRun& run, SignalKind kind, const ExperimentConfig& config) {
  auto scored = score_cases(run, kind, config);
  SignalCurve out;
  out.kind = kind;
  out.scope = scored.scope;
  out.warnings = scored.signal.warnings;
  out.curve = abstention_curve(scored.predicted, scored.actual, scored.signal.scores, config.fractions,
                               config.negligible_step);
  return out;
}

const SplitSummary* ClaimsResult::split(SplitKind kind) const {
  for (const auto& s : splits) {
    if (s.kind == kind) return &s;
  }
  return nullptr;
}

const SignalCurve* ClaimsResult::signal(SignalKind kind) const {
  for (const auto& s : temporal_signals) {
    if (s.kind == kind) return &s;
  }
  return nullptr;
}

ClaimsResult compute_claims(const ExperimentConfig& config) {
  const auto records = load_ratings(config);
  ClaimsResult result;
  for (SplitKind kind : config.splits) {
    const auto run = prepare_split(records, kind, config);
    result.splits.push_back(summarize_split(run, config, result.invariant_failures));
    if (kind != SplitKind::kTemporal) continue;
    for (SignalKind signal : config.confidence_kinds) {
      result.temporal_signals.push_back(signal_curve(run, signal, config));
      const auto& curve = result.temporal_signals.back().curve;
      for (double c : curve.metric) {
        if (!std::isfinite(c)) {
          result.invariant_failures.push_back(std::string(to_string(signal)) + ": non-finite curve value");
          break;
        }
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Expected-value bands

std::vector<BandCheck> band_checks(const ClaimsResult& r) {
  std::vector<BandCheck> checks;
  const auto add = [&](std::string name, bool pass, std::string detail) {
    checks.push_back({std::move(name), pass, std::move(detail)});
  };
  const auto* temporal = r.split(SplitKind::kTemporal);
  if (temporal != nullptr) {
    add("temporal RMSE", std::abs(temporal->rmse_mf - 1.027) <= 0.02 && std::abs(temporal->rmse_global - 1.119) <= 0.01,
        "mf " + fixed(temporal->rmse_mf) + " (1.027 +/- 0.02), global mean " + fixed(temporal->rmse_global) +
            " (1.119 +/- 0.01)");
  }

  bool shift_ok = !r.splits.empty();
  std::string shift_detail;
  bool auc_ok = !r.splits.empty();
  std::string auc_detail;
  for (const auto& s : r.splits) {
    const std::string name(to_string(s.kind));
    const bool ks_band = s.kind != SplitKind::kTemporal || std::abs(s.ks.statistic - 0.185) <= 0.03;
    shift_ok = shift_ok && s.ks.p_value < 1e-6 && s.test_exception_rate >= 2.5 * s.train_exception_rate && ks_band;
    shift_detail += name + " ks " + fixed(s.ks.statistic, 3) + " p " + sci(s.ks.p_value) + " rate " +
                    fixed(100 * s.train_exception_rate, 1) + "% -> " + fixed(100 * s.test_exception_rate, 1) + "%; ";
    auc_ok = auc_ok && std::abs(s.auc_train - 0.71) <= 0.03 && std::abs(s.auc_test - 0.62) <= 0.03 &&
             s.auc_train - s.auc_test >= 0.05;
    auc_detail += name + " " + fixed(s.auc_train, 3) + " -> " + fixed(s.auc_test, 3) + "; ";
  }
  add("residual shift", shift_ok, shift_detail);
  add("exception classifier AUC", auc_ok, auc_detail);

  if (temporal != nullptr) {
    std::optional<double> at35, at40;
    for (const auto& row : temporal->fp_fn) {
      if (row.threshold == 3.5) at35 = row.ratio;
      if (row.threshold == 4.0) at40 = row.ratio;
    }
    add("FP/FN crossing", at35 && at40 && *at35 > 1.0 && *at40 < 0.2,
        "ratio " + (at35 ? fixed(*at35, 3) : std::string("undefined")) + " at 3.5, " +
            (at40 ? fixed(*at40, 3) : std::string("undefined")) + " at 4.0");
  }

  const auto* cold_user = r.split(SplitKind::kColdUser);
  const auto* cold_item = r.split(SplitKind::kColdItem);
  if (temporal && cold_user && cold_item) {
    const auto& t = temporal->count_curve;
    const auto t10 = value_at(t, 0.10);
    const auto t25 = value_at(t, 0.25);
    const bool temporal_ok = t.violation_count >= 2 && t10 && t25 && *t25 > *t10;
    const bool user_ok = cold_user->count_curve.violation_count == 0;
    const auto& ci = cold_item->count_curve;
    const bool item_ok = ci.violation_count <= 1 && ci.max_adverse_step < 5e-4;
    add("count-based abstention", temporal_ok && user_ok && item_ok,
        "temporal " + std::to_string(t.violation_count) + " violations (25% " + (t25 ? fixed(*t25) : "-") +
            " vs 10% " + (t10 ? fixed(*t10) : "-") + "), cold_user " +
            std::to_string(cold_user->count_curve.violation_count) + ", cold_item " +
            std::to_string(ci.violation_count) + " (max adverse step " + sci(ci.max_adverse_step) + ")");
  }

  const auto* count = r.signal(SignalKind::kCountBased);
  const auto* ensemble = r.signal(SignalKind::kEnsemble);
  const auto* residual = r.signal(SignalKind::kResidualPredicted);
  const auto* recency = r.signal(SignalKind::kRecency);
  if (count && ensemble && residual) {
    const auto e0 = value_at(ensemble->curve, 0.0);
    const auto e25 = value_at(ensemble->curve, 0.25);
    const bool order = ensemble->curve.violation_count <= residual->curve.violation_count &&
                       residual->curve.violation_count <= count->curve.violation_count;
    add("baseline ordering", order && e0 && e25 && *e25 <= *e0 - 0.015,
        "violations ensemble " + std::to_string(ensemble->curve.violation_count) + ", residual " +
            std::to_string(residual->curve.violation_count) + ", count " +
            std::to_string(count->curve.violation_count) + "; ensemble " + (e0 ? fixed(*e0) : "-") + " -> " +
            (e25 ? fixed(*e25) : "-"));
  }
  if (temporal) {
    add("C1 rank alignment", temporal->c1.spearman.statistic > 0.0 && temporal->c1.spearman.p_value < 1e-6,
        "rho " + fixed(temporal->c1.spearman.statistic, 4) + " p " + sci(temporal->c1.spearman.p_value));
  }
  if (count && recency) {
    const auto r0 = value_at(recency->curve, 0.0);
    const auto r25 = value_at(recency->curve, 0.25);
    add("recency confidence",
        recency->curve.violation_count <= count->curve.violation_count && r0 && r25 && *r25 <= *r0,
        std::to_string(recency->curve.violation_count) + " violations vs count " +
            std::to_string(count->curve.violation_count) + "; " + (r0 ? fixed(*r0) : "-") + " -> " +
            (r25 ? fixed(*r25) : "-"));
  }
  return checks;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

void add_rmse_table(Report& report, const std::vector<SplitSummary>& splits) {
  auto& t = report.add_table("rmse_by_model_and_split", {"split", "global_mean", "user_mean", "item_mean", "mf"});
  for (const auto& s : splits) t.add_row({cell(to_string(s.kind)), s.rmse_global, s.rmse_user, s.rmse_item, s.rmse_mf});
}

void add_exception_tables(Report& report, const std::vector<SplitSummary>& splits) {
  auto& shift = report.add_table("residual_distribution_shift",
                                 {"split", "ks_stat", "ks_p", "tau", "train_exception_rate", "test_exception_rate"});
  for (const auto& s : splits) {
    shift.add_row({cell(to_string(s.kind)), s.ks.statistic, s.ks.p_value, s.tau, s.train_exception_rate,
                   s.test_exception_rate});
  }
  auto& auc = report.add_table("exception_classifier_auc", {"split", "auc_train", "auc_test", "drop"});
  for (const auto& s : splits) auc.add_row({cell(to_string(s.kind)), s.auc_train, s.auc_test, s.auc_train - s.auc_test});
  auto& fpfn = report.add_table("fp_fn_ratio", {"split", "threshold", "tp", "fp", "tn", "fn", "fp_fn_ratio"});
  for (const auto& s : splits) {
    for (const auto& row : s.fp_fn) {
      fpfn.add_row({cell(to_string(s.kind)), row.threshold, cell(row.tp), cell(row.fp), cell(row.tn), cell(row.fn),
                    cell(row.ratio)});
    }
  }
}

std::vector<std::string> curve_table_columns(std::vector<std::string> leading, const std::vector<double>& fractions) {
  for (auto& c : curve_columns(fractions)) leading.push_back(std::move(c));
  leading.emplace_back("violations");
  leading.emplace_back("negligible_violations");
  return leading;
}

void add_signal_table(Report& report, const std::string& name, const ClaimsResult& r,
                      const std::vector<SignalKind>& kinds, const std::vector<double>& fractions) {
  auto& t = report.add_table(name, curve_table_columns({"signal", "cases"}, fractions));
  for (SignalKind k : kinds) {
    const auto* s = r.signal(k);
    if (s == nullptr) continue;
    std::vector<Cell> row = {cell(to_string(k)), cell(s->scope)};
    append_curve(row, s->curve);
    t.add_row(std::move(row));
  }
}

}  // namespace

Report claims_report(const ClaimsResult& r, const ExperimentConfig& config) {
  Report report;
  report.command = "claims";
  add_header(report, config);
  add_rmse_table(report, r.splits);
  add_exception_tables(report, r.splits);

  auto& abstain = report.add_table("rmse_under_abstention", curve_table_columns({"split"}, config.fractions));
  for (const auto& s : r.splits) {
    std::vector<Cell> row = {cell(to_string(s.kind))};
    append_curve(row, s.count_curve);
    abstain.add_row(std::move(row));
  }
  auto& c1 = report.add_table("c1_rank_alignment",
                              {"split", "spearman_rho", "spearman_p", "kendall_tau", "kendall_p", "n", "pass"});
  for (const auto& s : r.splits) {
    c1.add_row({cell(to_string(s.kind)), s.c1.spearman.statistic, s.c1.spearman.p_value, s.c1.kendall.statistic,
                s.c1.kendall.p_value, cell(s.c1.spearman.n), s.c1.pass});
  }
  if (!r.temporal_signals.empty()) {
    add_signal_table(report, "abstention_baselines", r,
                     {SignalKind::kRandomControl, SignalKind::kCountBased, SignalKind::kResidualPredicted,
                      SignalKind::kEnsemble},
                     config.fractions);
    add_signal_table(report, "context_fix", r,
                     {SignalKind::kCountBased, SignalKind::kRecency, SignalKind::kEnsemble,
                      SignalKind::kCombinedStructRecency},
                     config.fractions);
  }

  for (const auto& s : r.splits) {
    for (const auto& w : s.warnings) report.warnings.push_back(std::string(to_string(s.kind)) + ": " + w);
  }
  for (const auto& s : r.temporal_signals) {
    for (const auto& w : s.warnings) report.warnings.push_back(std::string(to_string(s.kind)) + ": " + w);
  }
  const auto checks = band_checks(r);
  std::size_t passed = 0;
  for (const auto& c : checks) {
    report.summary.push_back(std::string(c.pass ? "PASS " : "WARN ") + c.name + ": " + c.detail);
    if (c.pass) {
      ++passed;
    } else {
      report.warnings.push_back("expected band missed: " + c.name);
    }
  }
  report.summary.push_back("bands: " + std::to_string(passed) + "/" + std::to_string(checks.size()) +
                           " within expected range; invariants: " +
                           (r.invariant_failures.empty() ? std::string("ok")
                                                         : std::to_string(r.invariant_failures.size()) + " failed"));
  report.invariant_failures = r.invariant_failures;
  return report;
}

Report run_claims(const ExperimentConfig& config) { return claims_report(compute_claims(config), config); }

Report run_ingest(const ExperimentConfig& config) {
  const auto records = load_ratings(config);
  Report report;
  report.command = "ingest";
  add_header(report, config);
  std::set<EntityId> users, items;
  std::map<double, std::size_t> histogram;
  double sum = 0.0;
  std::int64_t first = INT64_MAX, last = INT64_MIN;
  for (const auto& r : records) {
    users.insert(r.user_id);
    items.insert(r.item_id);
    ++histogram[r.rating];
    sum += r.rating;
    first = std::min(first, r.timestamp);
    last = std::max(last, r.timestamp);
  }
  if (records.empty()) throw InvalidArgument("ingest: dataset is empty");
  auto& t = report.add_table("dataset_summary",
                             {"ratings", "users", "items", "mean_rating", "first_timestamp", "last_timestamp"});
  t.add_row({cell(records.size()), cell(users.size()), cell(items.size()), sum / static_cast<double>(records.size()),
             Cell(first), Cell(last)});
  auto& h = report.add_table("rating_histogram", {"rating", "count"});
  for (const auto& [rating, n] : histogram) h.add_row({rating, cell(n)});
  return report;
}

Report run_split(const ExperimentConfig& config) {
  const auto records = load_ratings(config);
  Report report;
  report.command = "split";
  add_header(report, config);
  auto& t = report.add_table("splits", {"split", "train", "test", "train_users", "train_items", "test_users",
                                        "test_items", "cold_test_cases"});
  for (SplitKind kind : config.splits) {
    const auto split = make_split(records, {kind, config.test_fraction, config.split_seed});
    const std::string label(to_string(kind));
    for (const auto& f : check_split_invariants(split)) report.invariant_failures.push_back(label + ": " + f);
    std::set<EntityId> test_users, test_items;
    std::size_t cold = 0;
    for (const auto& r : split.test) {
      test_users.insert(r.user_id);
      test_items.insert(r.item_id);
      if (split.user_count(r.user_id) == 0 || split.item_count(r.item_id) == 0) ++cold;
    }
    t.add_row({cell(label), cell(split.train.size()), cell(split.test.size()), cell(split.user_counts.size()),
               cell(split.item_counts.size()), cell(test_users.size()), cell(test_items.size()), cell(cold)});
    if (!config.output_dir.empty()) {
      std::filesystem::create_directories(config.output_dir);
      write_movielens(std::filesystem::path(config.output_dir) / (label + "_train.tsv"), split.train);
      write_movielens(std::filesystem::path(config.output_dir) / (label + "_test.tsv"), split.test);
    }
  }
  return report;
}

Report run_fit(const ExperimentConfig& config) {
  const auto records = load_ratings(config);
  Report report;
  report.command = "fit";
  add_header(report, config);
  auto& rm = report.add_table("rmse_by_model_and_split", {"split", "global_mean", "user_mean", "item_mean", "mf"});
  auto& obj = report.add_table("als_objective", {"split", "half_step", "objective"});
  for (SplitKind kind : config.splits) {
    const auto split = make_split(records, {kind, config.test_fraction, config.split_seed});
    AlsTrace trace;
    const auto model = fit_als(split.train, config.backbone, &trace);
    const auto actual = actual_ratings(split.test);
    const std::string label(to_string(kind));
    rm.add_row({cell(label),
                rmse(predict_all(fit_baseline(split.train, BaselineKind::kGlobalMean), split.test), actual),
                rmse(predict_all(fit_baseline(split.train, BaselineKind::kUserMean), split.test), actual),
                rmse(predict_all(fit_baseline(split.train, BaselineKind::kItemMean), split.test), actual),
                rmse(predict_all(model, split.test), actual)});
    for (std::size_t k = 0; k < trace.objective.size(); ++k) obj.add_row({cell(label), cell(k), trace.objective[k]});
    for (std::size_t k = 1; k < trace.objective.size(); ++k) {
      if (trace.objective[k] > trace.objective[k - 1] * (1.0 + 1e-9)) {
        report.invariant_failures.push_back(label + ": ALS objective increased at half-step " + std::to_string(k));
        break;
      }
    }
    if (!config.output_dir.empty()) {
      std::filesystem::create_directories(config.output_dir);
      save_model(std::filesystem::path(config.output_dir) / ("mf_" + label + ".model"), model);
    }
  }
  return report;
}

Report run_confidence(const ExperimentConfig& config) {
  const auto records = load_ratings(config);
  Report report;
  report.command = "confidence";
  add_header(report, config);
  auto& t = report.add_table("signals", {"split", "signal", "cases", "scored", "min", "max", "mean"});
  for (SplitKind kind : config.splits) {
    const auto run = prepare_split(records, kind, config);
    const std::string label(to_string(kind));
    for (SignalKind signal : config.confidence_kinds) {
      const auto scored = score_cases(run, signal, config);
      const auto& s = scored.signal.scores;
      for (double v : s) {
        if (!std::isfinite(v)) {
          report.invariant_failures.push_back(label + " " + std::string(to_string(signal)) + ": non-finite score");
          break;
        }
      }
      const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
      t.add_row({cell(label), cell(to_string(signal)), cell(scored.scope), cell(s.size()), *lo, *hi, stats::mean(s)});
      for (const auto& w : scored.signal.warnings) {
        report.warnings.push_back(label + " " + std::string(to_string(signal)) + ": " + w);
      }
      if (!config.output_dir.empty()) {
        const auto conf = min_max_normalize(s);
        const auto acc = accuracy_indicator(scored.predicted, scored.actual, config.accuracy_tolerance);
        std::vector<OutcomeRecord> stream;
        for (std::size_t k = 0; k < conf.size(); ++k) stream.push_back({conf[k], acc[k], std::nullopt});
        std::filesystem::create_directories(config.output_dir);
        write_outcome_stream(std::filesystem::path(config.output_dir) /
                                 ("confidence_" + label + "_" + std::string(to_string(signal)) + ".csv"),
                             stream);
      }
    }
  }
  return report;
}

Report run_curve(const ExperimentConfig& config) {
  const auto records = load_ratings(config);
  Report report;
  report.command = "curve";
  add_header(report, config);
  auto& t = report.add_table("abstention_curves", curve_table_columns({"split", "signal", "cases"}, config.fractions));
  auto& points = report.add_table("curve_points", {"split", "signal", "fraction", "coverage", "retained", "rmse"});
  for (SplitKind kind : config.splits) {
    const auto run = prepare_split(records, kind, config);
    const std::string label(to_string(kind));
    for (SignalKind signal : config.confidence_kinds) {
      const auto c = signal_curve(run, signal, config);
      std::vector<Cell> row = {cell(label), cell(to_string(signal)), cell(c.scope)};
      append_curve(row, c.curve);
      t.add_row(std::move(row));
      for (std::size_t k = 0; k < c.curve.fractions.size(); ++k) {
        points.add_row({cell(label), cell(to_string(signal)), c.curve.fractions[k], c.curve.coverage[k],
                        cell(c.curve.retained[k]), c.curve.metric[k]});
      }
      for (const auto& w : c.warnings) report.warnings.push_back(label + " " + std::string(to_string(signal)) + ": " + w);
    }
  }
  return report;
}

Report run_exceptions(const ExperimentConfig& config) {
  const auto records = load_ratings(config);
  Report report;
  report.command = "exceptions";
  add_header(report, config);
  std::vector<SplitSummary> splits;
  for (SplitKind kind : config.splits) {
    const auto run = prepare_split(records, kind, config);
    splits.push_back(summarize_split(run, config, report.invariant_failures));
  }
  add_exception_tables(report, splits);
  return report;
}

// ---------------------------------------------------------------------------
// Adaptive recalibration

AdaptiveSummary compute_adaptive(const ExperimentConfig& config) {
  const auto records = load_ratings(config);
  const auto run = prepare_split(records, SplitKind::kTemporal, config);
  AdaptiveSummary out;
  BlockOptions options = config.blocks;
  options.fractions = config.fractions;
  out.experiment = block_experiment(run.split, run.model, options);
  double s_sum = 0.0, a_sum = 0.0;
  std::size_t s_n = 0, a_n = 0;
  for (const auto& b : out.experiment.blocks) {
    if (const auto v = value_at(b.static_curve, 0.15)) {
      s_sum += *v;
      ++s_n;
    }
    if (b.adaptive_curve) {
      if (const auto v = value_at(*b.adaptive_curve, 0.15)) {
        a_sum += *v;
        ++a_n;
      }
    }
  }
  if (s_n) out.static_mean_at_15 = s_sum / static_cast<double>(s_n);
  if (a_n) out.adaptive_mean_at_15 = a_sum / static_cast<double>(a_n);
  return out;
}

Report run_adaptive(const ExperimentConfig& config) {
  const auto summary = compute_adaptive(config);
  const auto& e = summary.experiment;
  Report report;
  report.command = "adaptive";
  add_header(report, config);
  auto& t = report.add_table("adaptive_recalibration",
                             curve_table_columns({"block", "gate", "cases", "full_rmse"}, config.fractions));
  auto& tiers = report.add_table("recalibrated_tiers",
                                 {"block", "tier", "lower", "upper", "window_cases", "window_mae", "acts"});
  for (const auto& b : e.blocks) {
    std::vector<Cell> row = {cell(b.index), cell("static"), cell(b.size), b.full_rmse};
    append_curve(row, b.static_curve);
    t.add_row(std::move(row));
    if (b.adaptive_curve) {
      std::vector<Cell> arow = {cell(b.index), cell("adaptive"), cell(b.size), b.full_rmse};
      append_curve(arow, *b.adaptive_curve);
      t.add_row(std::move(arow));
    }
    if (b.state) {
      for (std::size_t g = 0; g < b.state->groups.size(); ++g) {
        const auto& grp = b.state->groups[g];
        const bool acts = b.state->threshold && grp.lower >= *b.state->threshold;
        tiers.add_row({cell(b.index), cell(g), grp.lower, grp.upper, cell(grp.count), grp.mae, acts});
      }
      if (group_tail_inversions(*b.state) != 0) {
        report.invariant_failures.push_back("block " + std::to_string(b.index) + ": recalibrated tiers still invert");
      }
      if (!b.state->threshold) report.summary.push_back("block " + std::to_string(b.index) + ": never act");
    }
  }
  for (const auto& n : e.notices) report.summary.push_back(n);
  report.summary.push_back("violations: static " + std::to_string(e.static_violations()) + ", adaptive " +
                           std::to_string(e.adaptive_violations()));
  if (summary.static_mean_at_15 && summary.adaptive_mean_at_15) {
    report.summary.push_back("mean RMSE at 15%: static " + fixed(*summary.static_mean_at_15) + ", adaptive " +
                             fixed(*summary.adaptive_mean_at_15));
    const bool directional = e.adaptive_violations() >= e.static_violations() &&
                             *summary.adaptive_mean_at_15 >= *summary.static_mean_at_15 - 0.002;
    report.summary.push_back(std::string(directional ? "PASS" : "WARN") +
                             " adaptive recalibration does not beat the static gate");
    if (!directional) report.warnings.push_back("expected band missed: adaptive recalibration");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Synthetic worlds

RegimeVerdict evaluate_regime(const WorldSpec& spec, std::span<const double> fractions) {
  RegimeVerdict v;
  v.regime = analytic_regime(spec);
  v.contextual = spec.drift_sigma > 0.0;
  v.sweep = sweep_seeds(spec, fractions);
  const auto n = v.sweep.seeds.size();
  const auto required = static_cast<std::size_t>(spec.min_passing_seeds);
  std::ostringstream line;
  if (!v.contextual) {
    const auto clean = v.sweep.seeds_with_zero_count_violations();
    v.pass = clean >= required;
    line << "structural regime: " << (v.pass ? "PASS" : "FAIL") << " (count-based violations 0 in " << clean << "/"
         << n << " seeds, required " << required << ")";
  } else {
    const auto hit = v.sweep.seeds_with_count_violations();
    const auto oracle_bad = v.sweep.seeds_with_oracle_violations();
    v.pass = v.regime.contextual && hit >= required && oracle_bad == 0;
    line << "contextual regime: " << (v.pass ? "PASS" : "FAIL") << " (count-based violations in " << hit << "/" << n
         << " seeds, required " << required << "; oracle violations in " << oracle_bad << "/" << n << " seeds)";
    if (!v.regime.contextual) line << "; drift variance below 10x structural error";
  }
  v.line = line.str();
  return v;
}

Report run_synth(const WorldSpec& spec, std::span<const double> fractions) {
  const auto v = evaluate_regime(spec, fractions);
  Report report;
  report.command = "synth";
  std::istringstream spec_text(format_world_spec(spec));
  json spec_json = json::object();
  for (std::string line; std::getline(spec_text, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) spec_json[line.substr(0, eq)] = line.substr(eq + 3);
  }
  report.config = {{"world_spec", spec_json}, {"fractions", std::vector<double>(fractions.begin(), fractions.end())}};
  report.seeds = v.sweep.seeds;
  auto& regime = report.add_table("regime", {"drift_variance", "structural_mse", "ratio", "contextual"});
  regime.add_row({v.regime.drift_variance, v.regime.structural_mse,
                  v.regime.structural_mse > 0.0 ? Cell(v.regime.drift_variance / v.regime.structural_mse) : Cell(),
                  v.regime.contextual});
  auto& sweep = report.add_table("seed_sweep", {"seed", "count_violations", "recency_violations", "oracle_violations"});
  for (std::size_t k = 0; k < v.sweep.seeds.size(); ++k) {
    sweep.add_row({Cell(static_cast<std::int64_t>(v.sweep.seeds[k])), cell(v.sweep.count_violations[k]),
                   cell(v.sweep.recency_violations[k]), cell(v.sweep.oracle_violations[k])});
  }
  report.summary.push_back(v.line);
  if (!v.pass) report.warnings.push_back("expected band missed: " + v.line);
  return report;
}

// ---------------------------------------------------------------------------
// Generic stream diagnosis

DiagnoseMode parse_diagnose_mode(std::string_view name) {
  if (name == "accuracy") return DiagnoseMode::kAccuracy;
  if (name == "regression") return DiagnoseMode::kRegression;
  throw InvalidArgument("unknown diagnose mode '" + std::string(name) + "'");
}

DiagnoseResult diagnose(const std::vector<OutcomeRecord>& stream, const DiagnoseOptions& options) {
  if (stream.size() < 3) throw InvalidArgument("diagnose: need at least three cases");
  const bool accuracy_mode = options.mode == DiagnoseMode::kAccuracy;
  std::vector<double> conf, outcome, quality;
  for (const auto& r : stream) {
    conf.push_back(r.confidence);
    outcome.push_back(r.outcome);
    quality.push_back(accuracy_mode ? r.outcome : -r.outcome);
    if (accuracy_mode && r.outcome != 0.0 && r.outcome != 1.0) {
      throw InvalidArgument("diagnose: accuracy mode needs 0/1 outcomes");
    }
  }
  DiagnoseResult out;
  if (std::all_of(conf.begin(), conf.end(), [&](double c) { return c == conf.front(); })) {
    out.verdict = kSignalDegenerate;
    out.notes.push_back("confidence is constant; it cannot rank cases");
    return out;
  }
  try {
    out.c1 = check_c1(conf, quality, options.c1);
  } catch (const DegenerateInput& e) {
    out.notes.push_back(std::string("C1 undefined: ") + e.what());
  }
  const auto mode = accuracy_mode ? QualityMode::kAccuracy : QualityMode::kError;
  out.zones = check_c2(conf, outcome, std::min(options.bins, stream.size()), mode);
  if (accuracy_mode) out.calibration = ece(conf, outcome);

  const bool tiered = std::all_of(stream.begin(), stream.end(), [](const OutcomeRecord& r) { return r.tier.has_value(); });
  if (tiered && accuracy_mode) {
    std::vector<Tier> tiers;
    for (const auto& r : stream) tiers.push_back(parse_tier(*r.tier));
    out.tiers = tier_report(tiers, outcome);
  }

  bool inverted = out.zones->inversion_count() > 0;
  if (out.tiers) {
    std::size_t present = 0;
    for (auto t : {Tier::kHigh, Tier::kMed, Tier::kLow}) present += out.tiers->stats(t).count > 0 ? 1 : 0;
    if (present >= 2 && !out.tiers->monotonic) {
      inverted = true;
      out.notes.push_back("tier outcome rates are not strictly ordered HIGH > MED > LOW");
    }
  }
  if (out.c1 && out.c1->spearman.statistic < 0.0 && out.c1->spearman.p_value < options.c1.max_p) {
    inverted = true;
    out.notes.push_back("confidence is significantly anti-aligned with quality");
  }
  out.verdict = inverted ? kInversionFound : kGateSafe;
  return out;
}

Report run_diagnose(const std::filesystem::path& stream_path, const DiagnoseOptions& options) {
  const auto stream = load_outcome_stream(stream_path);
  const auto d = diagnose(stream, options);
  Report report;
  report.command = "diagnose";
  report.config = {{"stream", stream_path.string()},
                   {"mode", options.mode == DiagnoseMode::kAccuracy ? "accuracy" : "regression"},
                   {"bins", options.bins},
                   {"c1_min_rho", options.c1.min_rho},
                   {"c1_max_p", options.c1.max_p}};
  if (d.c1) {
    auto& t = report.add_table("c1", {"spearman_rho", "spearman_p", "kendall_tau", "kendall_p", "n", "pass"});
    t.add_row({d.c1->spearman.statistic, d.c1->spearman.p_value, d.c1->kendall.statistic, d.c1->kendall.p_value,
               cell(d.c1->spearman.n), d.c1->pass});
  }
  if (d.zones) {
    auto& t = report.add_table("c2_zones", {"zone", "lower", "upper", "count", "mean_outcome", "tail_inversion"});
    for (std::size_t z = 0; z < d.zones->zones.size(); ++z) {
      const auto& zone = d.zones->zones[z];
      const bool inv = std::find(d.zones->tail_inversions.begin(), d.zones->tail_inversions.end(), z) !=
                       d.zones->tail_inversions.end();
      t.add_row({cell(z), zone.lower, zone.upper, cell(zone.count), zone.mean_quality, inv});
    }
    if (!d.zones->merged_empty_bins.empty()) {
      report.summary.push_back("merged " + std::to_string(d.zones->merged_empty_bins.size()) + " empty bin(s)");
    }
  }
  if (d.calibration) {
    auto& t = report.add_table("calibration", {"lower", "upper", "count", "mean_confidence", "accuracy"});
    for (const auto& b : d.calibration->bins) {
      t.add_row({b.lower, b.upper, cell(b.count), b.count ? Cell(b.mean_confidence) : Cell(),
                 b.count ? Cell(b.accuracy) : Cell()});
    }
    report.summary.push_back("ECE " + fixed(d.calibration->ece));
  }
  if (d.tiers) {
    auto& t = report.add_table("tiers", {"tier", "count", "positives", "rate"});
    for (auto tier : {Tier::kHigh, Tier::kMed, Tier::kLow}) {
      const auto& s = d.tiers->stats(tier);
      t.add_row({cell(tier_name(tier)), cell(s.count), cell(s.positives), cell(s.rate)});
    }
    auto& ts = report.add_table("tier_summary", {"high_over_med_lift", "monotonic", "chi_squared", "chi_squared_p"});
    ts.add_row({cell(d.tiers->high_over_med_lift), d.tiers->monotonic,
                d.tiers->chi_squared ? Cell(d.tiers->chi_squared->statistic) : Cell(),
                d.tiers->chi_squared ? Cell(d.tiers->chi_squared->p_value) : Cell()});
    if (!d.tiers->lift_note.empty()) report.summary.push_back("lift undefined: " + d.tiers->lift_note);
  }
  report.summary.insert(report.summary.begin(), "verdict: " + d.verdict);
  for (const auto& n : d.notes) report.summary.push_back(n);
  return report;
}

}  // namespace gatecheck
