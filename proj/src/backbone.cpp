#include "gatecheck/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include "gatecheck/error.hpp"
#include "gatecheck/rng.hpp"

namespace gatecheck {

namespace {

constexpr const char* kModelMagic = "gatecheck-mf";
constexpr int kModelVersion = 1;

struct Index {
  std::vector<EntityId> ids;
  std::map<EntityId, std::size_t> position;
};

Index build_index(std::span<const RatingRecord> train, bool users) {
  Index idx;
  for (const auto& r : train) idx.position.emplace(users ? r.user_id : r.item_id, 0);
  idx.ids.reserve(idx.position.size());
  for (auto& [id, pos] : idx.position) {
    pos = idx.ids.size();
    idx.ids.push_back(id);
  }
  return idx;
}

// One half-iteration: re-solve every row of `solve` (factor + bias packed as
// the last coordinate) holding `fixed` constant.
void solve_side(const std::vector<std::vector<std::pair<std::size_t, double>>>& by_entity,
                const Eigen::MatrixXd& fixed, Eigen::MatrixXd& solve, double lambda) {
  const Eigen::Index k = fixed.cols() - 1;  // last column is the bias
  Eigen::MatrixXd gram(k + 1, k + 1);
  Eigen::VectorXd rhs(k + 1);
  Eigen::VectorXd design(k + 1);
  for (std::size_t e = 0; e < by_entity.size(); ++e) {
    const auto& ratings = by_entity[e];
    gram.setZero();
    rhs.setZero();
    for (const auto& [other, centered] : ratings) {
      design.head(k) = fixed.row(static_cast<Eigen::Index>(other)).head(k).transpose();
      design[k] = 1.0;
      const double target = centered - fixed(static_cast<Eigen::Index>(other), k);
      gram.noalias() += design * design.transpose();
      rhs.noalias() += target * design;
    }
    gram.diagonal().array() += lambda * static_cast<double>(ratings.size());
    solve.row(static_cast<Eigen::Index>(e)) = gram.llt().solve(rhs).transpose();
  }
}

double objective_dense(const std::vector<std::vector<std::pair<std::size_t, double>>>& by_user,
                       const Eigen::MatrixXd& users, const Eigen::MatrixXd& items,
                       const std::vector<std::size_t>& item_counts, double lambda) {
  const Eigen::Index k = users.cols() - 1;
  double loss = 0.0;
  double penalty = 0.0;
  for (std::size_t u = 0; u < by_user.size(); ++u) {
    const auto urow = users.row(static_cast<Eigen::Index>(u));
    for (const auto& [i, centered] : by_user[u]) {
      const auto irow = items.row(static_cast<Eigen::Index>(i));
      const double score = urow.head(k).dot(irow.head(k)) + urow[k] + irow[k];
      loss += (centered - score) * (centered - score);
    }
    penalty += lambda * static_cast<double>(by_user[u].size()) * urow.squaredNorm();
  }
  for (std::size_t i = 0; i < item_counts.size(); ++i) {
    penalty += lambda * static_cast<double>(item_counts[i]) * items.row(static_cast<Eigen::Index>(i)).squaredNorm();
  }
  return loss + penalty;
}

}  // namespace

double clip_rating(double value) { return std::clamp(value, 1.0, 5.0); }

double MfModel::raw_score(EntityId user, EntityId item) const {
  double score = global_mean;
  const auto ub = user_bias.find(user);
  const auto ib = item_bias.find(item);
  if (ub != user_bias.end()) score += ub->second;
  if (ib != item_bias.end()) score += ib->second;
  const auto uf = user_factors.find(user);
  const auto itf = item_factors.find(item);
  if (uf != user_factors.end() && itf != item_factors.end()) score += uf->second.dot(itf->second);
  return score;
}

double MfModel::predict(EntityId user, EntityId item) const { return clip_rating(raw_score(user, item)); }

MfModel fit_als(std::span<const RatingRecord> train, const AlsOptions& options, AlsTrace* trace) {
  if (train.empty()) throw InvalidArgument("fit_als: empty training set");
  if (options.rank < 1) throw InvalidArgument("fit_als: rank must be >= 1");
  if (!(options.lambda > 0.0)) throw InvalidArgument("fit_als: lambda must be > 0");
  if (options.iterations < 0) throw InvalidArgument("fit_als: iterations must be >= 0");

  const Index users = build_index(train, true);
  const Index items = build_index(train, false);
  double total = 0.0;
  for (const auto& r : train) total += r.rating;
  const double mu = total / static_cast<double>(train.size());

  std::vector<std::vector<std::pair<std::size_t, double>>> by_user(users.ids.size());
  std::vector<std::vector<std::pair<std::size_t, double>>> by_item(items.ids.size());
  for (const auto& r : train) {
    const std::size_t u = users.position.at(r.user_id);
    const std::size_t i = items.position.at(r.item_id);
    by_user[u].emplace_back(i, r.rating - mu);
    by_item[i].emplace_back(u, r.rating - mu);
  }
  std::vector<std::size_t> item_counts(items.ids.size());
  for (std::size_t i = 0; i < by_item.size(); ++i) item_counts[i] = by_item[i].size();

  const int k = options.rank;
  Rng rng(options.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  Eigen::MatrixXd user_mat = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(users.ids.size()), k + 1);
  Eigen::MatrixXd item_mat = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(items.ids.size()), k + 1);
  for (Eigen::Index u = 0; u < user_mat.rows(); ++u) {
    for (int f = 0; f < k; ++f) user_mat(u, f) = rng.uniform() * scale;
  }
  for (Eigen::Index i = 0; i < item_mat.rows(); ++i) {
    for (int f = 0; f < k; ++f) item_mat(i, f) = rng.uniform() * scale;
  }

  if (trace) trace->objective.push_back(objective_dense(by_user, user_mat, item_mat, item_counts, options.lambda));
  for (int it = 0; it < options.iterations; ++it) {
    solve_side(by_user, item_mat, user_mat, options.lambda);
    if (trace) trace->objective.push_back(objective_dense(by_user, user_mat, item_mat, item_counts, options.lambda));
    solve_side(by_item, user_mat, item_mat, options.lambda);
    if (trace) trace->objective.push_back(objective_dense(by_user, user_mat, item_mat, item_counts, options.lambda));
  }
  if (!user_mat.allFinite() || !item_mat.allFinite()) {
    throw Error("fit_als: non-finite factors (seed " + std::to_string(options.seed) + ")");
  }

  MfModel model;
  model.rank = k;
  model.lambda = options.lambda;
  model.global_mean = mu;
  for (std::size_t u = 0; u < users.ids.size(); ++u) {
    const auto row = user_mat.row(static_cast<Eigen::Index>(u));
    model.user_factors.emplace(users.ids[u], row.head(k).transpose());
    model.user_bias.emplace(users.ids[u], row[k]);
  }
  for (std::size_t i = 0; i < items.ids.size(); ++i) {
    const auto row = item_mat.row(static_cast<Eigen::Index>(i));
    model.item_factors.emplace(items.ids[i], row.head(k).transpose());
    model.item_bias.emplace(items.ids[i], row[k]);
  }
  return model;
}

double als_objective(const MfModel& model, std::span<const RatingRecord> train) {
  std::map<EntityId, std::size_t> user_n, item_n;
  double loss = 0.0;
  for (const auto& r : train) {
    const double e = r.rating - model.raw_score(r.user_id, r.item_id);
    loss += e * e;
    ++user_n[r.user_id];
    ++item_n[r.item_id];
  }
  double penalty = 0.0;
  for (const auto& [id, n] : user_n) {
    const double b = model.user_bias.at(id);
    penalty += model.lambda * static_cast<double>(n) * (model.user_factors.at(id).squaredNorm() + b * b);
  }
  for (const auto& [id, n] : item_n) {
    const double b = model.item_bias.at(id);
    penalty += model.lambda * static_cast<double>(n) * (model.item_factors.at(id).squaredNorm() + b * b);
  }
  return loss + penalty;
}

BaselineModel fit_baseline(std::span<const RatingRecord> train, BaselineKind kind) {
  if (train.empty()) throw InvalidArgument("fit_baseline: empty training set");
  BaselineModel model;
  model.kind = kind;
  double total = 0.0;
  for (const auto& r : train) total += r.rating;
  model.global_mean = total / static_cast<double>(train.size());
  if (kind == BaselineKind::kGlobalMean) return model;
  std::unordered_map<EntityId, std::pair<double, std::size_t>> sums;
  for (const auto& r : train) {
    auto& s = sums[kind == BaselineKind::kUserMean ? r.user_id : r.item_id];
    s.first += r.rating;
    ++s.second;
  }
  for (const auto& [id, s] : sums) model.means.emplace(id, s.first / static_cast<double>(s.second));
  return model;
}

double BaselineModel::predict(EntityId user, EntityId item) const {
  if (kind == BaselineKind::kGlobalMean) return clip_rating(global_mean);
  const auto it = means.find(kind == BaselineKind::kUserMean ? user : item);
  return clip_rating(it == means.end() ? global_mean : it->second);
}

double rmse(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size()) throw InvalidArgument("rmse: length mismatch");
  if (predicted.empty()) throw InvalidArgument("rmse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - actual[i];
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(predicted.size()));
}

double rmse(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw InvalidArgument("rmse: empty input");
  double sum = 0.0;
  for (const auto& [p, a] : pairs) sum += (p - a) * (p - a);
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

std::vector<double> actual_ratings(std::span<const RatingRecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.rating);
  return out;
}

void save_model(const std::filesystem::path& path, const MfModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  out << kModelMagic << ' ' << kModelVersion << '\n';
  out << "rank " << model.rank << "\nlambda " << model.lambda << "\nglobal_mean " << model.global_mean << '\n';
  const auto write_side = [&](const char* name, const auto& factors, const auto& biases) {
    std::vector<EntityId> ids;
    for (const auto& [id, _] : factors) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    out << name << ' ' << ids.size() << '\n';
    for (EntityId id : ids) {
      out << id << ' ' << biases.at(id);
      for (double v : factors.at(id)) out << ' ' << v;
      out << '\n';
    }
  };
  write_side("users", model.user_factors, model.user_bias);
  write_side("items", model.item_factors, model.item_bias);
}

MfModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const auto fail = [&](const std::string& what) { throw Error(path.string() + ": " + what); };
  std::string magic, key;
  int version = 0;
  if (!(in >> magic >> version) || magic != kModelMagic) fail("not a gatecheck model file");
  if (version != kModelVersion) fail("unsupported model version " + std::to_string(version));
  MfModel model;
  if (!(in >> key >> model.rank) || key != "rank" || model.rank < 1) fail("bad rank");
  if (!(in >> key >> model.lambda) || key != "lambda") fail("bad lambda");
  if (!(in >> key >> model.global_mean) || key != "global_mean") fail("bad global_mean");
  const auto read_side = [&](const char* name, auto& factors, auto& biases) {
    std::size_t count = 0;
    if (!(in >> key >> count) || key != name) fail(std::string("bad ") + name + " header");
    for (std::size_t n = 0; n < count; ++n) {
      EntityId id;
      double bias;
      Eigen::VectorXd f(model.rank);
      if (!(in >> id >> bias)) fail(std::string("truncated ") + name + " block");
      for (int j = 0; j < model.rank; ++j) {
        if (!(in >> f[j])) fail(std::string("truncated ") + name + " block");
      }
      biases.emplace(id, bias);
      factors.emplace(id, std::move(f));
    }
  };
  read_side("users", model.user_factors, model.user_bias);
  read_side("items", model.item_factors, model.item_bias);
  return model;
}

}  // namespace gatecheck
