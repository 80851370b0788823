#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gatecheck/dataset.hpp"
#include "gatecheck/diagnostics.hpp"

namespace gatecheck {

// Y(x, t) = f(x) + g(x, t) + noise, one (user, item) pair per x.
//
// f comes from rank-`rank` Gaussian factors around 3. Each pair gets a
// power-law observation count k in [1, max_count], P(k) ~ k^-count_exponent.
// All k training draws land in one burst at a uniform step in
// [0, train_steps) and carry N(0, structural_noise^2) noise, so the per-pair
// mean has error structural_noise / sqrt(k). g is a per-pair Gaussian random
// walk with per-step sd drift_sigma. The single test observation falls at a
// uniform step in [train_steps, train_steps + test_steps) with
// N(0, observation_noise^2) noise.
struct WorldSpec {
  int n_users = 100;
  int n_items = 100;
  int rank = 3;
  double count_exponent = 1.2;
  int max_count = 50;
  double structural_noise = 1.0;
  double drift_sigma = 0.0;
  int train_steps = 100;
  int test_steps = 10;
  double observation_noise = 0.1;
  std::uint64_t seed = 1;
  // Pre-registered acceptance for the seed sweep (seeds seed, seed+1, ...).
  int sweep_seeds = 10;
  int min_passing_seeds = 9;
};

// `key = value` lines; '#' starts a comment. Unknown keys are rejected.
WorldSpec parse_world_spec(std::string_view text, const std::string& source = "<memory>");
WorldSpec load_world_spec(const std::filesystem::path& path);
std::string format_world_spec(const WorldSpec& spec);
void validate(const WorldSpec& spec);

struct SyntheticPair {
  EntityId user = 0;
  EntityId item = 0;
  double f = 0.0;
  int count = 0;
  int train_step = 0;
  int test_step = 0;
  std::vector<double> train_values;
  double test_value = 0.0;

  double estimate() const;  // per-pair mean of the training draws
};

struct SyntheticWorld {
  WorldSpec spec;
  std::vector<SyntheticPair> pairs;
  // Row p is pair p's drift path at steps 0 .. train_steps + test_steps.
  Eigen::MatrixXd drift;

  double g(std::size_t pair, int step) const { return drift(static_cast<Eigen::Index>(pair), step); }
};

SyntheticWorld generate(const WorldSpec& spec);

struct RegimeCheck {
  double drift_variance = 0.0;   // E[Var(g(test) - g(train))]
  double structural_mse = 0.0;   // structural_noise^2 * E[1/k]
  bool contextual = false;       // drift_variance >= 10 * structural_mse
};

RegimeCheck analytic_regime(const WorldSpec& spec);

struct WorldCurves {
  AbstentionCurve count_based;
  AbstentionCurve recency;            // negated staleness of the training burst
  AbstentionCurve oracle_structural;  // negated true standard error of the estimate
  AbstentionCurve oracle_contextual;  // negated |systematic error|
  std::vector<std::string> warnings;
  double count_spearman = 0.0;        // Spearman(count, -squared error)
  double count_spearman_p = 1.0;
};

// Per-pair mean backbone scored on every test observation.
WorldCurves evaluate_world(const SyntheticWorld& world, std::span<const double> fractions);

// Requires drift_sigma == 0.
WorldCurves structural_experiment(const WorldSpec& spec, std::span<const double> fractions);
// Requires the analytic contextual regime.
WorldCurves contextual_experiment(const WorldSpec& spec, std::span<const double> fractions);

struct SeedSweep {
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> count_violations;
  std::vector<std::size_t> recency_violations;
  std::vector<std::size_t> oracle_violations;  // oracle matching the regime

  std::size_t seeds_with_zero_count_violations() const;
  std::size_t seeds_with_count_violations() const;
  std::size_t seeds_with_oracle_violations() const;
  double median_count_violations() const;
};

SeedSweep sweep_seeds(const WorldSpec& spec, std::span<const double> fractions);

// RatingRecord export; values are clipped to [1, 5] and steps become days.
SplitDataset to_split(const SyntheticWorld& world);

}  // namespace gatecheck
