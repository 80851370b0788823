#include "gatecheck/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "gatecheck/error.hpp"

namespace gatecheck {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char* where) {
  if (a.size() != b.size()) throw InvalidArgument(std::string(where) + ": length mismatch");
}

// True when `candidate` is strictly better than `reference` in this mode.
bool better(double candidate, double reference, QualityMode mode) {
  return mode == QualityMode::kAccuracy ? candidate > reference : candidate < reference;
}

// `sums` are the per-zone outcome totals; mean * count does not round-trip
// exactly, which would turn ties into inversions.
void find_inversions(ZoneReport& report, const std::vector<double>& sums) {
  const auto& zones = report.zones;
  for (std::size_t i = 0; i + 1 < zones.size(); ++i) {
    double tail_sum = 0.0;
    std::size_t tail_n = 0;
    for (std::size_t j = i + 1; j < zones.size(); ++j) {
      tail_sum += sums[j];
      tail_n += zones[j].count;
    }
    if (tail_n > 0 && zones[i].count > 0 &&
        better(zones[i].mean_quality, tail_sum / static_cast<double>(tail_n), report.mode)) {
      report.tail_inversions.push_back(i);
    }
    if (zones[i].count > 0 && zones[i + 1].count > 0 &&
        better(zones[i].mean_quality, zones[i + 1].mean_quality, report.mode)) {
      report.adjacent_inversions.emplace_back(i, i + 1);
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

C1Report check_c1(std::span<const double> confidence, std::span<const double> accuracy,
                  const C1Thresholds& thresholds) {
  require_same_length(confidence, accuracy, "check_c1");
  C1Report report;
  report.spearman = stats::spearman(confidence, accuracy);
  report.kendall = stats::kendall_tau(confidence, accuracy);
  report.pass = report.spearman.statistic > thresholds.min_rho && report.spearman.p_value < thresholds.max_p;
  return report;
}

std::vector<double> accuracy_indicator(std::span<const double> predicted, std::span<const double> actual,
                                       double tolerance) {
  require_same_length(predicted, actual, "accuracy_indicator");
  std::vector<double> out(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    out[i] = std::abs(predicted[i] - actual[i]) <= tolerance ? 1.0 : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------

ZoneReport check_c2(std::span<const double> confidence, std::span<const double> outcome, std::size_t n_bins,
                    QualityMode mode) {
  require_same_length(confidence, outcome, "check_c2");
  if (n_bins == 0) throw InvalidArgument("check_c2: n_bins must be positive");
  if (confidence.size() < n_bins) throw InvalidArgument("check_c2: fewer cases than bins");
  const auto [min_it, max_it] = std::minmax_element(confidence.begin(), confidence.end());
  const double lo = *min_it;
  const double hi = *max_it;

  ZoneReport report;
  report.mode = mode;
  const std::size_t bins = hi > lo ? n_bins : 1;
  std::vector<double> sums(bins, 0.0);
  std::vector<std::size_t> counts(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    std::size_t b = 0;
    if (bins > 1) {
      b = static_cast<std::size_t>(std::floor((confidence[i] - lo) / width));
      b = std::min(b, bins - 1);
    }
    sums[b] += outcome[i];
    ++counts[b];
  }
  const auto edge = [&](std::size_t k) { return k == bins ? hi : lo + width * static_cast<double>(k); };

  // Fold empty bins into the next non-empty bin on the right.
  std::vector<double> zone_sums;
  std::size_t pending_lower = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (counts[b] == 0) {
      report.merged_empty_bins.push_back(b);
      continue;
    }
    Zone z;
    z.lower = edge(pending_lower);
    z.upper = edge(b + 1);
    z.count = counts[b];
    z.mean_quality = sums[b] / static_cast<double>(counts[b]);
    report.zones.push_back(z);
    zone_sums.push_back(sums[b]);
    pending_lower = b + 1;
  }
  // Trailing empty bins extend the last zone.
  report.zones.back().upper = hi;
  report.bin_edges.push_back(report.zones.front().lower);
  for (const auto& z : report.zones) report.bin_edges.push_back(z.upper);
  find_inversions(report, zone_sums);
  return report;
}

ZoneReport check_c2_zones(std::span<const Zone> zones, QualityMode mode) {
  if (zones.empty()) throw InvalidArgument("check_c2_zones: no zones");
  ZoneReport report;
  report.mode = mode;
  report.zones.assign(zones.begin(), zones.end());
  report.bin_edges.push_back(zones.front().lower);
  std::vector<double> sums;
  for (const auto& z : zones) {
    report.bin_edges.push_back(z.upper);
    sums.push_back(z.mean_quality * static_cast<double>(z.count));
  }
  find_inversions(report, sums);
  return report;
}

std::vector<PairInversion> c2_pair_inversions(std::span<const double> confidence, std::span<const double> outcome,
                                              QualityMode mode) {
  require_same_length(confidence, outcome, "c2_pair_inversions");
  std::map<double, std::pair<double, std::size_t>> levels;  // value -> (sum, count)
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    auto& l = levels[confidence[i]];
    l.first += outcome[i];
    ++l.second;
  }
  std::vector<double> values, sums;
  std::vector<std::size_t> counts;
  for (const auto& [v, sc] : levels) {
    values.push_back(v);
    sums.push_back(sc.first);
    counts.push_back(sc.second);
  }
  const std::size_t m = values.size();
  // suffix[k] pools levels k..m-1
  std::vector<double> suffix_sum(m + 1, 0.0);
  std::vector<std::size_t> suffix_n(m + 1, 0);
  for (std::size_t k = m; k-- > 0;) {
    suffix_sum[k] = suffix_sum[k + 1] + sums[k];
    suffix_n[k] = suffix_n[k + 1] + counts[k];
  }
  std::vector<PairInversion> out;
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      const double band_sum = suffix_sum[a] - suffix_sum[b];
      const auto band_n = static_cast<double>(suffix_n[a] - suffix_n[b]);
      const double band_mean = band_sum / band_n;
      const double tail_mean = suffix_sum[b] / static_cast<double>(suffix_n[b]);
      if (better(band_mean, tail_mean, mode)) out.push_back({values[a], values[b], band_mean, tail_mean});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> default_fractions() { return {0.0, 0.05, 0.10, 0.15, 0.20, 0.25}; }

std::vector<std::size_t> abstention_order(std::span<const double> confidence) {
  std::vector<std::size_t> order(confidence.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confidence[a] < confidence[b]; });
  return order;
}

std::size_t abstained_count(double fraction, std::size_t n) {
  // The epsilon absorbs representation error such as 0.05 * 20000.
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

AbstentionCurve curve_from_order(std::span<const std::size_t> drop_order, std::span<const double> values,
                                 std::span<const double> fractions, CurveMetric metric, double negligible) {
  const std::size_t n = values.size();
  if (drop_order.size() != n) throw InvalidArgument("curve_from_order: order/values length mismatch");
  if (n == 0) throw InvalidArgument("curve_from_order: no cases");
  if (fractions.empty() || fractions.front() != 0.0) {
    throw InvalidArgument("curve_from_order: fractions must start at 0");
  }
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    if (!(fractions[k] < 1.0)) throw InvalidArgument("curve_from_order: fraction must be < 1");
    if (k > 0 && !(fractions[k] > fractions[k - 1])) {
      throw InvalidArgument("curve_from_order: fractions must be strictly ascending");
    }
  }

  AbstentionCurve curve;
  curve.metric_kind = metric;
  for (double fraction : fractions) {
    const std::size_t dropped = abstained_count(fraction, n);
    const std::size_t kept = n - dropped;
    // Summed fresh per fraction; a running difference loses digits.
    double sum = 0.0;
    for (std::size_t k = dropped; k < n; ++k) sum += values[drop_order[k]];
    const double mean = sum / static_cast<double>(kept);
    curve.fractions.push_back(fraction);
    curve.metric.push_back(metric == CurveMetric::kRmse ? std::sqrt(mean) : mean);
    curve.coverage.push_back(static_cast<double>(kept) / static_cast<double>(n));
    curve.retained.push_back(kept);
  }
  for (std::size_t k = 1; k < curve.metric.size(); ++k) {
    const double step = metric == CurveMetric::kRmse ? curve.metric[k] - curve.metric[k - 1]
                                                     : curve.metric[k - 1] - curve.metric[k];
    if (step > 0.0) {
      ++curve.violation_count;
      curve.violation_steps.push_back(k);
      curve.max_adverse_step = std::max(curve.max_adverse_step, step);
      if (step < negligible) ++curve.negligible_violations;
    }
  }
  return curve;
}

AbstentionCurve abstention_curve(std::span<const double> predicted, std::span<const double> actual,
                                 std::span<const double> confidence, std::span<const double> fractions,
                                 double negligible) {
  require_same_length(predicted, actual, "abstention_curve");
  require_same_length(predicted, confidence, "abstention_curve");
  std::vector<double> squared(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    squared[i] = (predicted[i] - actual[i]) * (predicted[i] - actual[i]);
  }
  const auto order = abstention_order(confidence);
  return curve_from_order(order, squared, fractions, CurveMetric::kRmse, negligible);
}

// ---------------------------------------------------------------------------

std::vector<SelectivePoint> selective_accuracy_curve(std::span<const double> confidence,
                                                     std::span<const double> accuracy,
                                                     std::span<const double> thresholds) {
  require_same_length(confidence, accuracy, "selective_accuracy_curve");
  if (confidence.empty()) throw InvalidArgument("selective_accuracy_curve: no cases");
  std::vector<SelectivePoint> out;
  for (double t : thresholds) {
    SelectivePoint p;
    p.threshold = t;
    double sum = 0.0;
    for (std::size_t i = 0; i < confidence.size(); ++i) {
      if (confidence[i] >= t) {
        sum += accuracy[i];
        ++p.retained;
      }
    }
    p.coverage = static_cast<double>(p.retained) / static_cast<double>(confidence.size());
    if (p.retained > 0) p.selective_accuracy = sum / static_cast<double>(p.retained);
    out.push_back(p);
  }
  return out;
}

double decomposition_identity_check(std::span<const double> confidence, std::span<const double> accuracy,
                                    double t1, double t2) {
  require_same_length(confidence, accuracy, "decomposition_identity_check");
  if (!(t1 < t2)) throw InvalidArgument("decomposition_identity_check: need t1 < t2");
  const double n = static_cast<double>(confidence.size());
  double upper_sum = 0.0, band_sum = 0.0;
  std::size_t upper_n = 0, band_n = 0, lower_n = 0;
  double lower_sum = 0.0;
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    if (confidence[i] >= t1) {
      lower_sum += accuracy[i];
      ++lower_n;
    }
    if (confidence[i] >= t2) {
      upper_sum += accuracy[i];
      ++upper_n;
    } else if (confidence[i] >= t1) {
      band_sum += accuracy[i];
      ++band_n;
    }
  }
  if (lower_n == 0) throw InvalidArgument("decomposition_identity_check: coverage(t1) is zero");
  const double phi1 = static_cast<double>(lower_n) / n;
  const double phi2 = static_cast<double>(upper_n) / n;
  const double sa1 = lower_sum / static_cast<double>(lower_n);
  const double sa2 = upper_n > 0 ? upper_sum / static_cast<double>(upper_n) : 0.0;
  const double band = band_n > 0 ? band_sum / static_cast<double>(band_n) : 0.0;
  return std::abs(sa1 * phi1 - sa2 * phi2 - (phi1 - phi2) * band);
}

// ---------------------------------------------------------------------------

CalibrationReport ece(std::span<const double> confidence, std::span<const double> accuracy, std::size_t n_bins) {
  require_same_length(confidence, accuracy, "ece");
  if (confidence.empty()) throw InvalidArgument("ece: no cases");
  if (n_bins == 0) throw InvalidArgument("ece: n_bins must be positive");
  std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
  std::vector<std::size_t> counts(n_bins, 0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    if (!(c >= 0.0 && c <= 1.0)) throw InvalidArgument("ece: confidence outside [0, 1]");
    const auto b = std::min(static_cast<std::size_t>(c * static_cast<double>(n_bins)), n_bins - 1);
    conf_sum[b] += c;
    acc_sum[b] += accuracy[i];
    ++counts[b];
  }
  CalibrationReport report;
  const double n = static_cast<double>(confidence.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    CalibrationBin bin;
    bin.lower = static_cast<double>(b) / static_cast<double>(n_bins);
    bin.upper = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    bin.count = counts[b];
    if (counts[b] > 0) {
      bin.mean_confidence = conf_sum[b] / static_cast<double>(counts[b]);
      bin.accuracy = acc_sum[b] / static_cast<double>(counts[b]);
      report.ece += static_cast<double>(counts[b]) / n * std::abs(bin.mean_confidence - bin.accuracy);
    }
    report.bins.push_back(bin);
  }
  return report;
}

// ---------------------------------------------------------------------------

Tier parse_tier(const std::string& name) {
  if (name == "HIGH") return Tier::kHigh;
  if (name == "MED" || name == "MEDIUM") return Tier::kMed;
  if (name == "LOW") return Tier::kLow;
  throw InvalidArgument("unknown tier '" + name + "'");
}

const char* tier_name(Tier tier) {
  switch (tier) {
    case Tier::kHigh:
      return "HIGH";
    case Tier::kMed:
      return "MED";
    case Tier::kLow:
      return "LOW";
  }
  return "?";
}

const TierStats& TierReport::stats(Tier t) const {
  switch (t) {
    case Tier::kHigh:
      return high;
    case Tier::kMed:
      return med;
    case Tier::kLow:
      return low;
  }
  return high;
}

TierReport tier_report(std::span<const Tier> tiers, std::span<const double> outcomes) {
  if (tiers.size() != outcomes.size()) throw InvalidArgument("tier_report: length mismatch");
  TierReport report;
  TierStats* slots[3] = {&report.high, &report.med, &report.low};
  for (std::size_t i = 0; i < tiers.size(); ++i) {
    const double o = outcomes[i];
    if (o != 0.0 && o != 1.0) throw InvalidArgument("tier_report: outcomes must be 0 or 1");
    TierStats& s = *slots[static_cast<int>(tiers[i])];
    ++s.count;
    if (o == 1.0) ++s.positives;
  }
  std::vector<const TierStats*> present;
  for (TierStats* s : {&report.high, &report.med, &report.low}) {
    if (s->count == 0) continue;
    s->rate.emplace(static_cast<double>(s->positives) / static_cast<double>(s->count));
    present.push_back(s);
  }
  if (present.empty()) throw InvalidArgument("tier_report: no cases");

  if (report.med.count == 0) {
    report.lift_note = "MED tier empty";
  } else if (*report.med.rate == 0.0) {
    report.lift_note = "MED rate is zero";
  } else if (report.high.count == 0) {
    report.lift_note = "HIGH tier empty";
  } else {
    report.high_over_med_lift = *report.high.rate / *report.med.rate;
  }

  report.monotonic = present.size() >= 2;
  for (std::size_t k = 1; k < present.size(); ++k) {
    if (!(*present[k - 1]->rate > *present[k]->rate)) report.monotonic = false;
  }

  if (present.size() >= 2) {
    std::vector<std::vector<double>> table;
    for (const TierStats* s : present) {
      table.push_back({static_cast<double>(s->positives), static_cast<double>(s->count - s->positives)});
    }
    try {
      report.chi_squared = stats::chi_squared_independence(table);
    } catch (const DegenerateInput&) {
      // every case shares one outcome; no test is possible
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

VarianceDecomposition variance_decomposition(std::span<const double> confidence,
                                             const Eigen::MatrixXd& structural_features,
                                             const Eigen::MatrixXd& contextual_features) {
  if (structural_features.cols() == 0 || contextual_features.cols() == 0) {
    throw InvalidArgument("variance_decomposition: both feature groups must be nonempty");
  }
  VarianceDecomposition out;
  out.r2_structural = stats::fit_ols_r2(structural_features, confidence).r_squared;
  out.r2_contextual = stats::fit_ols_r2(contextual_features, confidence).r_squared;
  const double total = out.r2_structural + out.r2_contextual;
  if (total > 1e-12) out.structural_fraction = out.r2_structural / total;
  return out;
}

}  // namespace gatecheck
