#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gatecheck/dataset.hpp"

namespace gatecheck {

struct AlsOptions {
  int rank = 10;
  double lambda = 0.1;
  int iterations = 20;
  std::uint64_t seed = 42;
};

// Biased matrix factorisation. A prediction is
//   global_mean + user_bias + item_bias + <user_factor, item_factor>
// clipped to [1, 5]; an entity absent from training contributes nothing.
struct MfModel {
  int rank = 0;
  double lambda = 0.0;
  double global_mean = 0.0;
  std::unordered_map<EntityId, Eigen::VectorXd> user_factors;
  std::unordered_map<EntityId, Eigen::VectorXd> item_factors;
  std::unordered_map<EntityId, double> user_bias;
  std::unordered_map<EntityId, double> item_bias;

  double predict(EntityId user, EntityId item) const;
  // Unclipped score; used by the clipping tests.
  double raw_score(EntityId user, EntityId item) const;
};

struct AlsTrace {
  // Penalised training objective after initialisation and after every
  // half-iteration (user solve, item solve).
  std::vector<double> objective;
};

// Alternating ridge solves with count-weighted regularisation: the penalty on
// an entity's factor and bias is lambda * (its number of training ratings).
// Factors start uniform(0, 1) / sqrt(rank) from the seed; biases start at 0.
MfModel fit_als(std::span<const RatingRecord> train, const AlsOptions& options,
                AlsTrace* trace = nullptr);

double als_objective(const MfModel& model, std::span<const RatingRecord> train);

enum class BaselineKind { kGlobalMean, kUserMean, kItemMean };

struct BaselineModel {
  BaselineKind kind = BaselineKind::kGlobalMean;
  double global_mean = 0.0;
  std::unordered_map<EntityId, double> means;

  double predict(EntityId user, EntityId item) const;
};

BaselineModel fit_baseline(std::span<const RatingRecord> train, BaselineKind kind);

double clip_rating(double value);

// Root mean squared error over (predicted, actual) pairs.
double rmse(std::span<const double> predicted, std::span<const double> actual);
double rmse(std::span<const std::pair<double, double>> pairs);

template <typename Model>
std::vector<double> predict_all(const Model& model, std::span<const RatingRecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(model.predict(r.user_id, r.item_id));
  return out;
}

std::vector<double> actual_ratings(std::span<const RatingRecord> records);

// Versioned text format; doubles are written with 17 significant digits so a
// save/load round trip is exact.
void save_model(const std::filesystem::path& path, const MfModel& model);
MfModel load_model(const std::filesystem::path& path);

}  // namespace gatecheck
