#pragma once

// Randomised property sweeps shared by the unit tests and the acceptance
// runner. Each returns a count of counterexamples or a worst-case residual.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gatecheck/diagnostics.hpp"
#include "gatecheck/rng.hpp"
#include "oracles.hpp"

namespace props {

struct Sample {
  std::vector<double> confidence;
  std::vector<int> correct;
  std::vector<double> accuracy;  // correct as doubles
};

// Few distinct confidence levels so ties and small bands are common.
inline Sample random_sample(gatecheck::Rng& rng) {
  Sample s;
  const std::size_t n = 2 + rng.below(40);
  const std::uint64_t levels = 1 + rng.below(8);
  const double p_base = rng.uniform();
  const double slope = rng.uniform(-0.6, 0.6);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = static_cast<double>(rng.below(levels)) / 8.0;
    const double p = std::clamp(p_base + slope * c, 0.0, 1.0);
    const int y = rng.uniform() < p ? 1 : 0;
    s.confidence.push_back(c);
    s.correct.push_back(y);
    s.accuracy.push_back(y);
  }
  return s;
}

struct EquivalenceSweep {
  std::size_t samples = 0;
  std::size_t monotone = 0;  // how many had non-decreasing SA
  std::size_t counterexamples = 0;
};

// Monotone selective accuracy over every observed threshold holds exactly
// when no band [a, b) beats its tail [b, inf).
inline EquivalenceSweep tail_inversion_equivalence(std::size_t n_samples, std::uint64_t seed) {
  gatecheck::Rng rng(seed);
  EquivalenceSweep out;
  for (std::size_t k = 0; k < n_samples; ++k) {
    const auto s = random_sample(rng);
    const bool monotone = oracle::non_decreasing(oracle::selective_accuracy_levels(s.confidence, s.correct));
    const bool no_inversion = gatecheck::c2_pair_inversions(s.confidence, s.accuracy).empty();
    ++out.samples;
    if (monotone) ++out.monotone;
    if (monotone != no_inversion) ++out.counterexamples;
  }
  return out;
}

// Worst |SA(t1) phi(t1) - SA(t2) phi(t2) - (phi(t1) - phi(t2)) band mean|.
inline double identity_max_residual(std::size_t n_draws, std::uint64_t seed) {
  gatecheck::Rng rng(seed);
  double worst = 0.0;
  std::size_t done = 0;
  while (done < n_draws) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<double> conf(n), acc(n);
    for (std::size_t i = 0; i < n; ++i) {
      conf[i] = rng.uniform();
      acc[i] = rng.below(3) == 0 ? rng.uniform() : static_cast<double>(rng.below(2));
    }
    double t1 = rng.uniform(), t2 = rng.uniform();
    if (t1 > t2) std::swap(t1, t2);
    if (!(t1 < t2) || *std::max_element(conf.begin(), conf.end()) < t1) continue;
    worst = std::max(worst, gatecheck::decomposition_identity_check(conf, acc, t1, t2));
    ++done;
  }
  return worst;
}

// Confidence equal to each case's realised accuracy rate: every level l/10
// holds whole blocks of ten cases with exactly l correct. Tail inversions are
// summed over equal-width binnings of 1..20 zones and one random contiguous
// partition per sample.
inline std::size_t aligned_inversions(std::size_t n_samples, std::uint64_t seed) {
  gatecheck::Rng rng(seed);
  std::size_t total = 0;
  for (std::size_t k = 0; k < n_samples; ++k) {
    std::vector<double> conf, quality;
    for (int level = 0; level <= 10; ++level) {
      if (rng.below(3) == 0) continue;
      const auto blocks = 1 + rng.below(4);
      for (std::uint64_t b = 0; b < blocks; ++b) {
        for (int j = 0; j < 10; ++j) {
          conf.push_back(level / 10.0);
          quality.push_back(j < level ? 1.0 : 0.0);
        }
      }
    }
    if (conf.empty()) continue;
    // Shuffle so case order carries no information.
    std::vector<std::size_t> perm(conf.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<double> c2(conf.size()), q2(conf.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      c2[i] = conf[perm[i]];
      q2[i] = quality[perm[i]];
    }
    const std::size_t n = c2.size();
    for (std::size_t bins = 1; bins <= 20 && bins <= n; ++bins) {
      total += gatecheck::check_c2(c2, q2, bins).inversion_count();
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return c2[a] < c2[b]; });
    std::vector<gatecheck::Zone> zones;
    std::size_t start = 0;
    while (start < n) {
      std::size_t end = start + 1;
      while (end < n && c2[order[end]] == c2[order[end - 1]]) ++end;
      while (end < n && rng.below(2) == 0) {
        ++end;
        while (end < n && c2[order[end]] == c2[order[end - 1]]) ++end;
      }
      gatecheck::Zone z;
      z.lower = c2[order[start]];
      z.upper = c2[order[end - 1]];
      z.count = end - start;
      double sum = 0.0;
      for (std::size_t j = start; j < end; ++j) sum += q2[order[j]];
      z.mean_quality = sum / static_cast<double>(z.count);
      zones.push_back(z);
      start = end;
    }
    total += gatecheck::check_c2_zones(zones).inversion_count();
  }
  return total;
}

}  // namespace props
