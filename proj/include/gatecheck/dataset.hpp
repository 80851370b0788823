#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gatecheck {

using EntityId = std::int64_t;

struct RatingRecord {
  EntityId user_id = 0;
  EntityId item_id = 0;
  double rating = 0.0;        // in [1, 5]
  std::int64_t timestamp = 0;  // seconds since epoch
};

bool operator==(const RatingRecord& a, const RatingRecord& b);

enum class SplitKind { kTemporal, kColdUser, kColdItem };

std::string_view to_string(SplitKind kind);
SplitKind parse_split_kind(std::string_view name);

struct SplitSpec {
  SplitKind kind = SplitKind::kTemporal;
  double test_fraction = 0.2;
  std::uint64_t seed = 42;
};

// Train and test are each ordered by (timestamp, user_id, item_id); a test
// case's position in `test` is its case index everywhere downstream.
struct SplitDataset {
  SplitSpec spec;
  std::vector<RatingRecord> train;
  std::vector<RatingRecord> test;
  std::map<EntityId, std::int64_t> user_counts;  // train-set observation counts
  std::map<EntityId, std::int64_t> item_counts;

  std::int64_t user_count(EntityId user) const;
  std::int64_t item_count(EntityId item) const;
};

// MovieLens 100K `u.data`: user \t item \t rating \t timestamp per line.
std::vector<RatingRecord> load_movielens(const std::filesystem::path& path);
std::vector<RatingRecord> parse_movielens(std::string_view text, const std::string& source = "<memory>");
void write_movielens(const std::filesystem::path& path, const std::vector<RatingRecord>& records);

SplitDataset make_split(const std::vector<RatingRecord>& records, const SplitSpec& spec);

// Failed invariants of a split, empty when the split is sound.
std::vector<std::string> check_split_invariants(const SplitDataset& split);

// Generic diagnostic stream, CSV with header "confidence,outcome" and an
// optional third column "tier" holding HIGH/MED/LOW.
struct OutcomeRecord {
  double confidence = 0.0;  // in [0, 1]
  double outcome = 0.0;     // {0,1} for accuracy streams, a loss otherwise
  std::optional<std::string> tier;
};

std::vector<OutcomeRecord> load_outcome_stream(const std::filesystem::path& path);
std::vector<OutcomeRecord> parse_outcome_stream(std::string_view text,
                                                const std::string& source = "<memory>");
void write_outcome_stream(const std::filesystem::path& path,
                          const std::vector<OutcomeRecord>& records);

}  // namespace gatecheck
