#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gatecheck/dataset.hpp"
#include "gatecheck/rng.hpp"

namespace testutil {

// Small low-rank rating matrix with integer ratings and distinct timestamps.
inline std::vector<gatecheck::RatingRecord> toy_ratings(int n_users, int n_items, int n, std::uint64_t seed) {
  gatecheck::Rng rng(seed);
  std::vector<double> ub(n_users), ib(n_items);
  for (auto& b : ub) b = rng.normal(0.0, 0.5);
  for (auto& b : ib) b = rng.normal(0.0, 0.5);
  std::vector<gatecheck::RatingRecord> out;
  for (int k = 0; k < n; ++k) {
    // Skewed user choice so counts vary.
    const auto u = static_cast<int>(std::floor(n_users * std::pow(rng.uniform(), 2.0)));
    const auto i = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_items)));
    const double raw = 3.5 + ub[u] + ib[i] + rng.normal(0.0, 0.8);
    const double rating = std::clamp(std::round(raw), 1.0, 5.0);
    out.push_back({u + 1, i + 1, rating, 1'000'000 + 3600 * static_cast<std::int64_t>(k)});
  }
  return out;
}

inline std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "gatecheck_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace testutil
