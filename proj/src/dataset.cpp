#include "gatecheck/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <tuple>

#include "gatecheck/error.hpp"
#include "gatecheck/rng.hpp"

namespace gatecheck {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

template <typename T>
bool parse_number(std::string_view field, T& out) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    fields.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

// Calls f(line_number, line) for each line, tolerating a trailing newline and
// CRLF endings.
template <typename F>
void for_each_line(std::string_view text, F f) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    f(++line_no, line);
    start = end + 1;
  }
}

auto record_key(const RatingRecord& r) { return std::tie(r.timestamp, r.user_id, r.item_id); }

void sort_records(std::vector<RatingRecord>& records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const RatingRecord& a, const RatingRecord& b) { return record_key(a) < record_key(b); });
}

}  // namespace

bool operator==(const RatingRecord& a, const RatingRecord& b) {
  return a.user_id == b.user_id && a.item_id == b.item_id && a.rating == b.rating &&
         a.timestamp == b.timestamp;
}

std::string_view to_string(SplitKind kind) {
  switch (kind) {
    case SplitKind::kTemporal:
      return "temporal";
    case SplitKind::kColdUser:
      return "cold_user";
    case SplitKind::kColdItem:
      return "cold_item";
  }
  return "unknown";
}

SplitKind parse_split_kind(std::string_view name) {
  if (name == "temporal") return SplitKind::kTemporal;
  if (name == "cold_user") return SplitKind::kColdUser;
  if (name == "cold_item") return SplitKind::kColdItem;
  throw InvalidArgument("unknown split kind '" + std::string(name) + "'");
}

std::int64_t SplitDataset::user_count(EntityId user) const {
  const auto it = user_counts.find(user);
  return it == user_counts.end() ? 0 : it->second;
}

std::int64_t SplitDataset::item_count(EntityId item) const {
  const auto it = item_counts.find(item);
  return it == item_counts.end() ? 0 : it->second;
}

std::vector<RatingRecord> parse_movielens(std::string_view text, const std::string& source) {
  std::vector<RatingRecord> records;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty()) return;
    const auto fields = split_fields(line, '\t');
    if (fields.size() != 4) {
      throw ParseError(source, line_no, "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    RatingRecord r;
    if (!parse_number(fields[0], r.user_id)) throw ParseError(source, line_no, "bad user id");
    if (!parse_number(fields[1], r.item_id)) throw ParseError(source, line_no, "bad item id");
    if (!parse_number(fields[2], r.rating)) throw ParseError(source, line_no, "bad rating");
    if (!parse_number(fields[3], r.timestamp)) throw ParseError(source, line_no, "bad timestamp");
    if (!(r.rating >= 1.0 && r.rating <= 5.0)) {
      throw ParseError(source, line_no, "rating out of range [1, 5]: " + std::string(fields[2]));
    }
    if (r.timestamp < 0) throw ParseError(source, line_no, "negative timestamp");
    records.push_back(r);
  });
  return records;
}

std::vector<RatingRecord> load_movielens(const std::filesystem::path& path) {
  return parse_movielens(read_file(path), path.string());
}

void write_movielens(const std::filesystem::path& path, const std::vector<RatingRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.user_id << '\t' << r.item_id << '\t' << r.rating << '\t' << r.timestamp << '\n';
  }
}

SplitDataset make_split(const std::vector<RatingRecord>& records, const SplitSpec& spec) {
  if (records.empty()) throw InvalidArgument("make_split: no records");
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
    throw InvalidArgument("make_split: test_fraction must lie in (0, 1)");
  }
  SplitDataset out;
  out.spec = spec;

  if (spec.kind == SplitKind::kTemporal) {
    std::vector<RatingRecord> sorted = records;
    sort_records(sorted);
    const auto n = sorted.size();
    const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(n)));
    if (n_test == 0 || n_test >= n) {
      throw InvalidArgument("make_split: test_fraction leaves train or test empty");
    }
    out.train.assign(sorted.begin(), sorted.end() - static_cast<std::ptrdiff_t>(n_test));
    out.test.assign(sorted.end() - static_cast<std::ptrdiff_t>(n_test), sorted.end());
  } else {
    const bool by_user = spec.kind == SplitKind::kColdUser;
    const auto key = [by_user](const RatingRecord& r) { return by_user ? r.user_id : r.item_id; };
    std::map<EntityId, std::size_t> sizes;
    for (const auto& r : records) ++sizes[key(r)];
    std::vector<EntityId> entities;
    entities.reserve(sizes.size());
    for (const auto& [id, _] : sizes) entities.push_back(id);
    Rng rng(spec.seed);
    rng.shuffle(std::span<EntityId>(entities));

    const double target = spec.test_fraction * static_cast<double>(records.size());
    std::set<EntityId> held;
    std::size_t held_ratings = 0;
    for (EntityId id : entities) {
      if (static_cast<double>(held_ratings) >= target) break;
      held.insert(id);
      held_ratings += sizes[id];
    }
    if (held_ratings == 0 || held_ratings >= records.size()) {
      throw InvalidArgument("make_split: test_fraction leaves train or test empty");
    }
    for (const auto& r : records) (held.count(key(r)) ? out.test : out.train).push_back(r);
    sort_records(out.train);
    sort_records(out.test);
  }

  for (const auto& r : out.train) {
    ++out.user_counts[r.user_id];
    ++out.item_counts[r.item_id];
  }
  return out;
}

std::vector<std::string> check_split_invariants(const SplitDataset& split) {
  std::vector<std::string> failures;
  if (split.train.empty()) failures.push_back("train set is empty");
  if (split.test.empty()) failures.push_back("test set is empty");
  switch (split.spec.kind) {
    case SplitKind::kTemporal: {
      std::int64_t max_train = INT64_MIN;
      for (const auto& r : split.train) max_train = std::max(max_train, r.timestamp);
      for (const auto& r : split.test) {
        if (r.timestamp < max_train) {
          failures.push_back("temporal: a test timestamp precedes the last train timestamp");
          break;
        }
      }
      break;
    }
    case SplitKind::kColdUser:
      for (const auto& r : split.test) {
        if (split.user_count(r.user_id) != 0) {
          failures.push_back("cold_user: test user " + std::to_string(r.user_id) + " seen in train");
          break;
        }
      }
      break;
    case SplitKind::kColdItem:
      for (const auto& r : split.test) {
        if (split.item_count(r.item_id) != 0) {
          failures.push_back("cold_item: test item " + std::to_string(r.item_id) + " seen in train");
          break;
        }
      }
      break;
  }
  return failures;
}

std::vector<OutcomeRecord> parse_outcome_stream(std::string_view text, const std::string& source) {
  std::vector<OutcomeRecord> records;
  bool has_tier = false;
  bool header_seen = false;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty()) return;
    if (!header_seen) {
      if (line == "confidence,outcome") {
        has_tier = false;
      } else if (line == "confidence,outcome,tier") {
        has_tier = true;
      } else {
        throw ParseError(source, line_no, "expected header 'confidence,outcome[,tier]'");
      }
      header_seen = true;
      return;
    }
    const auto fields = split_fields(line, ',');
    if (fields.size() != (has_tier ? 3u : 2u)) {
      throw ParseError(source, line_no, "wrong number of fields");
    }
    OutcomeRecord r;
    if (!parse_number(fields[0], r.confidence) || !std::isfinite(r.confidence)) {
      throw ParseError(source, line_no, "bad confidence");
    }
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
      throw ParseError(source, line_no, "confidence outside [0, 1]");
    }
    if (!parse_number(fields[1], r.outcome) || !std::isfinite(r.outcome)) {
      throw ParseError(source, line_no, "bad outcome");
    }
    if (has_tier) {
      const std::string tier(fields[2]);
      if (tier != "HIGH" && tier != "MED" && tier != "LOW") {
        throw ParseError(source, line_no, "tier must be HIGH, MED or LOW");
      }
      r.tier = tier;
    }
    records.push_back(std::move(r));
  });
  return records;
}

std::vector<OutcomeRecord> load_outcome_stream(const std::filesystem::path& path) {
  return parse_outcome_stream(read_file(path), path.string());
}

void write_outcome_stream(const std::filesystem::path& path, const std::vector<OutcomeRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const bool has_tier = !records.empty() && records.front().tier.has_value();
  out << (has_tier ? "confidence,outcome,tier\n" : "confidence,outcome\n");
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.confidence << ',' << r.outcome;
    if (has_tier) out << ',' << r.tier.value_or("MED");
    out << '\n';
  }
}

}  // namespace gatecheck
