#include "gatecheck/report.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gatecheck/error.hpp"

namespace gatecheck {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

nlohmann::json cell_json(const Cell& c) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return nullptr;
        } else if constexpr (std::is_same_v<T, double>) {
          if (!std::isfinite(v)) return nullptr;
          return v;
        } else {
          return v;
        }
      },
      c);
}

std::string cell_csv(const Cell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return "";
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          return std::isfinite(v) ? shortest(v) : "";
        } else {
          if (v.find_first_of(",\"\n") == std::string::npos) return v;
          std::string quoted = "\"";
          for (char ch : v) {
            if (ch == '"') quoted += '"';
            quoted += ch;
          }
          return quoted + "\"";
        }
      },
      c);
}

std::string cell_text(const Cell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return "-";
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "yes" : "no";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          if (!std::isfinite(v)) return "-";
          std::ostringstream out;
          if (v != 0.0 && std::abs(v) < 1e-3) {
            out << std::setprecision(3) << std::scientific << v;
          } else {
            out << std::fixed << std::setprecision(4) << v;
          }
          return out.str();
        } else {
          return v;
        }
      },
      c);
}

}  // namespace

Cell cell(std::optional<double> v) { return v ? Cell(*v) : Cell(std::monostate{}); }

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    throw InvalidArgument("table row has " + std::to_string(row.size()) + " cells, expected " +
                          std::to_string(columns.size()));
  }
  rows.push_back(std::move(row));
}

OutputFormat parse_format(std::string_view name) {
  if (name == "json") return OutputFormat::kJson;
  if (name == "csv") return OutputFormat::kCsv;
  if (name == "text") return OutputFormat::kText;
  throw InvalidArgument("unknown format '" + std::string(name) + "'");
}

Table& Report::add_table(const std::string& name, std::vector<std::string> columns) {
  for (const auto& [existing, _] : tables) {
    if (existing == name) throw InvalidArgument("duplicate table '" + name + "'");
  }
  tables.emplace_back(name, Table{std::move(columns), {}});
  return tables.back().second;
}

const Table& Report::table(const std::string& name) const {
  for (const auto& [existing, t] : tables) {
    if (existing == name) return t;
  }
  throw InvalidArgument("no table '" + name + "' in report " + command);
}

nlohmann::json to_json(const Table& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : table.rows) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& c : row) r.push_back(cell_json(c));
    rows.push_back(std::move(r));
  }
  return {{"columns", table.columns}, {"rows", std::move(rows)}};
}

nlohmann::json body_json(const Report& report) {
  nlohmann::json tables = nlohmann::json::object();
  for (const auto& [name, t] : report.tables) tables[name] = to_json(t);
  return {
      {"header",
       {{"tool", "gatecheck"}, {"schema_version", 1}, {"command", report.command}, {"config", report.config},
        {"seeds", report.seeds}}},
      {"tables", std::move(tables)},
      {"summary", report.summary},
      {"warnings", report.warnings},
      {"invariant_failures", report.invariant_failures},
  };
}

nlohmann::json to_json(const Report& report, const std::string& generated_at) {
  auto doc = body_json(report);
  doc["header"]["generated_at"] = generated_at;
  return doc;
}

std::string to_csv(const Table& table) {
  std::string out;
  for (std::size_t k = 0; k < table.columns.size(); ++k) {
    if (k) out += ',';
    out += cell_csv(Cell(table.columns[k]));
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) out += ',';
      out += cell_csv(row[k]);
    }
    out += '\n';
  }
  return out;
}

std::string to_text(const Report& report) {
  std::ostringstream out;
  for (const auto& [name, table] : report.tables) {
    out << "== " << name << " ==\n";
    std::vector<std::vector<std::string>> cells;
    std::vector<std::size_t> width(table.columns.size());
    for (std::size_t k = 0; k < table.columns.size(); ++k) width[k] = table.columns[k].size();
    for (const auto& row : table.rows) {
      cells.emplace_back();
      for (std::size_t k = 0; k < row.size(); ++k) {
        cells.back().push_back(cell_text(row[k]));
        width[k] = std::max(width[k], cells.back().back().size());
      }
    }
    const auto line = [&](const std::vector<std::string>& values) {
      for (std::size_t k = 0; k < values.size(); ++k) {
        if (k) out << "  ";
        // first column left-aligned, the rest right-aligned
        if (k == 0) {
          out << std::left << std::setw(static_cast<int>(width[k])) << values[k];
        } else {
          out << std::right << std::setw(static_cast<int>(width[k])) << values[k];
        }
      }
      out << '\n';
    };
    line(table.columns);
    for (const auto& row : cells) line(row);
    out << '\n';
  }
  for (const auto& s : report.summary) out << s << '\n';
  for (const auto& w : report.warnings) out << "WARN " << w << '\n';
  for (const auto& f : report.invariant_failures) out << "FAIL " << f << '\n';
  return out.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

void print_report(std::ostream& out, const Report& report, OutputFormat format) {
  switch (format) {
    case OutputFormat::kJson:
      out << to_json(report, utc_timestamp()).dump(2) << '\n';
      break;
    case OutputFormat::kCsv:
      for (const auto& [name, table] : report.tables) out << "# " << name << '\n' << to_csv(table) << '\n';
      break;
    case OutputFormat::kText:
      out << to_text(report);
      break;
  }
}

void write_report(const std::filesystem::path& dir, const Report& report) {
  std::filesystem::create_directories(dir);
  const auto write = [](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
  };
  write(dir / (report.command + ".json"), to_json(report, utc_timestamp()).dump(2) + "\n");
  write(dir / (report.command + ".txt"), to_text(report));
  for (const auto& [name, table] : report.tables) write(dir / (report.command + "__" + name + ".csv"), to_csv(table));
}

}  // namespace gatecheck
