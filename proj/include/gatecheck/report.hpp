#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace gatecheck {

// Missing values (undefined ratios, empty tiers) are monostate.
using Cell = std::variant<std::monostate, bool, std::int64_t, double, std::string>;

Cell cell(std::optional<double> v);
inline Cell cell(double v) { return v; }
inline Cell cell(std::size_t v) { return static_cast<std::int64_t>(v); }
inline Cell cell(int v) { return static_cast<std::int64_t>(v); }
inline Cell cell(std::string v) { return v; }
inline Cell cell(const char* v) { return std::string(v); }
inline Cell cell(std::string_view v) { return std::string(v); }
inline Cell cell(bool v) { return v; }

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add_row(std::vector<Cell> row);
};

enum class OutputFormat { kJson, kCsv, kText };

OutputFormat parse_format(std::string_view name);

// One document per command: a reproducibility header, named tables, summary
// lines, and the failures that decide the exit status.
struct Report {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::uint64_t> seeds;
  std::deque<std::pair<std::string, Table>> tables;  // in emission order; references stay valid
  std::vector<std::string> summary;
  std::vector<std::string> warnings;
  std::vector<std::string> invariant_failures;  // nonzero exit when present

  Table& add_table(const std::string& name, std::vector<std::string> columns);
  const Table& table(const std::string& name) const;
  bool ok() const { return invariant_failures.empty(); }
};

nlohmann::json to_json(const Table& table);
// Everything but the timestamp; byte-stable for a fixed config.
nlohmann::json body_json(const Report& report);
nlohmann::json to_json(const Report& report, const std::string& generated_at);

std::string to_csv(const Table& table);
std::string to_text(const Report& report);

std::string utc_timestamp();

void print_report(std::ostream& out, const Report& report, OutputFormat format);

// <dir>/<command>.json, <dir>/<command>.txt and <dir>/<command>__<table>.csv.
void write_report(const std::filesystem::path& dir, const Report& report);

}  // namespace gatecheck
