#include "gatecheck/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <sstream>
#include <tuple>

#include "gatecheck/error.hpp"
#include "gatecheck/rng.hpp"
#include "gatecheck/stats.hpp"

namespace gatecheck {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_value(std::string_view text, const std::string& source, std::size_t line, std::string_view key) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError(source, line, "bad value for '" + std::string(key) + "'");
  }
  return value;
}

std::vector<double> count_cdf(const WorldSpec& spec) {
  std::vector<double> cdf;
  double total = 0.0;
  for (int k = 1; k <= spec.max_count; ++k) {
    total += std::pow(static_cast<double>(k), -spec.count_exponent);
    cdf.push_back(total);
  }
  for (double& c : cdf) c /= total;
  return cdf;
}

}  // namespace

void validate(const WorldSpec& spec) {
  if (spec.n_users < 1 || spec.n_items < 1) throw InvalidArgument("world spec: n_users and n_items must be positive");
  if (static_cast<long long>(spec.n_users) * spec.n_items < 100) {
    throw InvalidArgument("world spec: n_users * n_items must be at least 100");
  }
  if (spec.rank < 1) throw InvalidArgument("world spec: rank must be positive");
  if (spec.max_count < 1) throw InvalidArgument("world spec: max_count must be positive");
  if (spec.train_steps < 1 || spec.test_steps < 1) throw InvalidArgument("world spec: step counts must be positive");
  for (double scale : {spec.count_exponent, spec.structural_noise, spec.drift_sigma, spec.observation_noise}) {
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw InvalidArgument("world spec: scales must be finite and >= 0");
  }
  if (spec.sweep_seeds < 1 || spec.min_passing_seeds < 0 || spec.min_passing_seeds > spec.sweep_seeds) {
    throw InvalidArgument("world spec: need 0 <= min_passing_seeds <= sweep_seeds");
  }
}

WorldSpec parse_world_spec(std::string_view text, const std::string& source) {
  WorldSpec spec;
  using Setter = std::function<void(std::string_view, std::size_t, std::string_view)>;
  const auto int_field = [&](int WorldSpec::*field) -> Setter {
    return [&spec, field, &source](std::string_view v, std::size_t line, std::string_view key) {
      spec.*field = parse_value<int>(v, source, line, key);
    };
  };
  const auto real_field = [&](double WorldSpec::*field) -> Setter {
    return [&spec, field, &source](std::string_view v, std::size_t line, std::string_view key) {
      spec.*field = parse_value<double>(v, source, line, key);
    };
  };
  const std::map<std::string, Setter, std::less<>> setters = {
      {"n_users", int_field(&WorldSpec::n_users)},
      {"n_items", int_field(&WorldSpec::n_items)},
      {"rank", int_field(&WorldSpec::rank)},
      {"count_exponent", real_field(&WorldSpec::count_exponent)},
      {"max_count", int_field(&WorldSpec::max_count)},
      {"structural_noise", real_field(&WorldSpec::structural_noise)},
      {"drift_sigma", real_field(&WorldSpec::drift_sigma)},
      {"train_steps", int_field(&WorldSpec::train_steps)},
      {"test_steps", int_field(&WorldSpec::test_steps)},
      {"observation_noise", real_field(&WorldSpec::observation_noise)},
      {"seed",
       [&spec, &source](std::string_view v, std::size_t line, std::string_view key) {
         spec.seed = parse_value<std::uint64_t>(v, source, line, key);
       }},
      {"sweep_seeds", int_field(&WorldSpec::sweep_seeds)},
      {"min_passing_seeds", int_field(&WorldSpec::min_passing_seeds)},
  };

  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ParseError(source, line_no, "unknown key '" + std::string(key) + "'");
    it->second(value, line_no, key);
  }
  validate(spec);
  return spec;
}

WorldSpec load_world_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_world_spec(buffer.str(), path.string());
}

std::string format_world_spec(const WorldSpec& spec) {
  std::ostringstream out;
  out.precision(17);
  out << "n_users = " << spec.n_users << "\n"
      << "n_items = " << spec.n_items << "\n"
      << "rank = " << spec.rank << "\n"
      << "count_exponent = " << spec.count_exponent << "\n"
      << "max_count = " << spec.max_count << "\n"
      << "structural_noise = " << spec.structural_noise << "\n"
      << "drift_sigma = " << spec.drift_sigma << "\n"
      << "train_steps = " << spec.train_steps << "\n"
      << "test_steps = " << spec.test_steps << "\n"
      << "observation_noise = " << spec.observation_noise << "\n"
      << "seed = " << spec.seed << "\n"
      << "sweep_seeds = " << spec.sweep_seeds << "\n"
      << "min_passing_seeds = " << spec.min_passing_seeds << "\n";
  return out.str();
}

double SyntheticPair::estimate() const {
  double sum = 0.0;
  for (double v : train_values) sum += v;
  return sum / static_cast<double>(train_values.size());
}

SyntheticWorld generate(const WorldSpec& spec) {
  validate(spec);
  SyntheticWorld world;
  world.spec = spec;
  Rng rng(spec.seed);

  const auto users = static_cast<Eigen::Index>(spec.n_users);
  const auto items = static_cast<Eigen::Index>(spec.n_items);
  Eigen::MatrixXd u(users, spec.rank), v(items, spec.rank);
  for (Eigen::Index i = 0; i < users; ++i) {
    for (int k = 0; k < spec.rank; ++k) u(i, k) = rng.normal();
  }
  for (Eigen::Index i = 0; i < items; ++i) {
    for (int k = 0; k < spec.rank; ++k) v(i, k) = rng.normal();
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.rank));

  const auto cdf = count_cdf(spec);
  const int total_steps = spec.train_steps + spec.test_steps;
  const auto n_pairs = static_cast<Eigen::Index>(users * items);
  world.drift.resize(n_pairs, total_steps + 1);
  world.pairs.reserve(static_cast<std::size_t>(n_pairs));

  Eigen::Index p = 0;
  for (Eigen::Index i = 0; i < users; ++i) {
    for (Eigen::Index j = 0; j < items; ++j, ++p) {
      SyntheticPair pair;
      pair.user = i + 1;
      pair.item = j + 1;
      pair.f = 3.0 + scale * u.row(i).dot(v.row(j));
      const double draw = rng.uniform();
      pair.count = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), draw) - cdf.begin()) + 1;
      pair.count = std::min(pair.count, spec.max_count);
      pair.train_step = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.train_steps)));
      pair.test_step = spec.train_steps + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.test_steps)));

      // The walk is drawn even when drift_sigma is zero so every spec that
      // differs only in drift shares f, counts and timing.
      world.drift(p, 0) = 0.0;
      for (int s = 1; s <= total_steps; ++s) world.drift(p, s) = world.drift(p, s - 1) + spec.drift_sigma * rng.normal();

      const double g_train = world.drift(p, pair.train_step);
      for (int k = 0; k < pair.count; ++k) {
        pair.train_values.push_back(pair.f + g_train + spec.structural_noise * rng.normal());
      }
      pair.test_value = pair.f + world.drift(p, pair.test_step) + spec.observation_noise * rng.normal();
      world.pairs.push_back(std::move(pair));
    }
  }
  return world;
}

RegimeCheck analytic_regime(const WorldSpec& spec) {
  validate(spec);
  RegimeCheck out;
  // E[1/k] under the truncated power law.
  double norm = 0.0, inv = 0.0;
  for (int k = 1; k <= spec.max_count; ++k) {
    const double w = std::pow(static_cast<double>(k), -spec.count_exponent);
    norm += w;
    inv += w / static_cast<double>(k);
  }
  out.structural_mse = spec.structural_noise * spec.structural_noise * inv / norm;
  // Mean gap between the training burst and the test step.
  const double mean_train = (static_cast<double>(spec.train_steps) - 1.0) / 2.0;
  const double mean_test = static_cast<double>(spec.train_steps) + (static_cast<double>(spec.test_steps) - 1.0) / 2.0;
  out.drift_variance = spec.drift_sigma * spec.drift_sigma * (mean_test - mean_train);
  out.contextual = out.drift_variance >= 10.0 * out.structural_mse && out.drift_variance > 0.0;
  return out;
}

WorldCurves evaluate_world(const SyntheticWorld& world, std::span<const double> fractions) {
  const std::size_t n = world.pairs.size();
  std::vector<double> predicted(n), actual(n), counts(n), recency(n), oracle_s(n), oracle_c(n), neg_sq(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& pair = world.pairs[k];
    predicted[k] = pair.estimate();
    actual[k] = pair.test_value;
    counts[k] = static_cast<double>(pair.count);
    recency[k] = -static_cast<double>(pair.test_step - pair.train_step);
    oracle_s[k] = -world.spec.structural_noise / std::sqrt(counts[k]);
    oracle_c[k] = -std::abs(predicted[k] - pair.f - world.g(k, pair.test_step));
    neg_sq[k] = -(predicted[k] - actual[k]) * (predicted[k] - actual[k]);
  }
  WorldCurves out;
  out.count_based = abstention_curve(predicted, actual, counts, fractions);
  out.recency = abstention_curve(predicted, actual, recency, fractions);
  out.oracle_structural = abstention_curve(predicted, actual, oracle_s, fractions);
  out.oracle_contextual = abstention_curve(predicted, actual, oracle_c, fractions);
  if (std::all_of(counts.begin(), counts.end(), [&](double c) { return c == counts.front(); })) {
    out.warnings.push_back("degenerate signal: every pair has the same observation count");
  } else {
    try {
      const auto rho = stats::spearman(counts, neg_sq);
      out.count_spearman = rho.statistic;
      out.count_spearman_p = rho.p_value;
    } catch (const DegenerateInput& e) {
      out.warnings.push_back(e.what());
    }
  }
  return out;
}

WorldCurves structural_experiment(const WorldSpec& spec, std::span<const double> fractions) {
  if (spec.drift_sigma != 0.0) throw InvalidArgument("structural_experiment: drift_sigma must be 0");
  return evaluate_world(generate(spec), fractions);
}

WorldCurves contextual_experiment(const WorldSpec& spec, std::span<const double> fractions) {
  const auto regime = analytic_regime(spec);
  if (!regime.contextual) {
    throw InvalidArgument("contextual_experiment: drift variance is below 10x the structural error");
  }
  return evaluate_world(generate(spec), fractions);
}

std::size_t SeedSweep::seeds_with_zero_count_violations() const {
  return static_cast<std::size_t>(std::count(count_violations.begin(), count_violations.end(), 0u));
}

std::size_t SeedSweep::seeds_with_count_violations() const {
  return count_violations.size() - seeds_with_zero_count_violations();
}

std::size_t SeedSweep::seeds_with_oracle_violations() const {
  return static_cast<std::size_t>(
      std::count_if(oracle_violations.begin(), oracle_violations.end(), [](std::size_t v) { return v > 0; }));
}

double SeedSweep::median_count_violations() const {
  if (count_violations.empty()) return 0.0;
  std::vector<double> v(count_violations.begin(), count_violations.end());
  return stats::quantile(v, 0.5);
}

SeedSweep sweep_seeds(const WorldSpec& spec, std::span<const double> fractions) {
  validate(spec);
  const bool contextual = spec.drift_sigma > 0.0;
  const std::vector<double> fr(fractions.begin(), fractions.end());
  std::vector<std::future<WorldCurves>> jobs;
  SeedSweep out;
  for (int k = 0; k < spec.sweep_seeds; ++k) {
    WorldSpec s = spec;
    s.seed = spec.seed + static_cast<std::uint64_t>(k);
    out.seeds.push_back(s.seed);
    jobs.push_back(std::async(std::launch::async, [s, &fr] { return evaluate_world(generate(s), fr); }));
  }
  for (auto& job : jobs) {
    const auto curves = job.get();
    out.count_violations.push_back(curves.count_based.violation_count);
    out.recency_violations.push_back(curves.recency.violation_count);
    out.oracle_violations.push_back(contextual ? curves.oracle_contextual.violation_count
                                               : curves.oracle_structural.violation_count);
  }
  return out;
}

SplitDataset to_split(const SyntheticWorld& world) {
  constexpr std::int64_t kDay = 86400;
  SplitDataset split;
  split.spec.kind = SplitKind::kTemporal;
  for (const auto& pair : world.pairs) {
    for (std::size_t k = 0; k < pair.train_values.size(); ++k) {
      split.train.push_back({pair.user, pair.item, std::clamp(pair.train_values[k], 1.0, 5.0),
                             pair.train_step * kDay + static_cast<std::int64_t>(k)});
    }
    split.test.push_back({pair.user, pair.item, std::clamp(pair.test_value, 1.0, 5.0), pair.test_step * kDay});
  }
  const auto by_time = [](const RatingRecord& a, const RatingRecord& b) {
    return std::tie(a.timestamp, a.user_id, a.item_id) < std::tie(b.timestamp, b.user_id, b.item_id);
  };
  std::stable_sort(split.train.begin(), split.train.end(), by_time);
  std::stable_sort(split.test.begin(), split.test.end(), by_time);
  split.spec.test_fraction =
      static_cast<double>(split.test.size()) / static_cast<double>(split.train.size() + split.test.size());
  for (const auto& r : split.train) {
    ++split.user_counts[r.user_id];
    ++split.item_counts[r.item_id];
  }
  return split;
}

}  // namespace gatecheck
