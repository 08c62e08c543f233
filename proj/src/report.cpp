#include "asmalign/report.hpp"

#include "asmalign/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <set>

namespace asmalign {
namespace {

const ordered_json& field(const ordered_json& j, const char* name, std::string_view where) {
  if (!j.is_object() || !j.contains(name)) throw SchemaError(fmt::format("{} missing field '{}'", where, name));
  return j[name];
}

void require_kind(const ordered_json& j, std::string_view kind) {
  require_schema(j, "reference-table", 1);
  if (field(j, "kind", "reference table").get<std::string>() != kind) {
    throw SchemaError(fmt::format("reference table is not of kind '{}'", kind));
  }
}

std::string markdown_row(const std::vector<std::string>& cells) {
  std::string out = "|";
  for (const auto& c : cells) out += " " + c + " |";
  return out + "\n";
}

std::string markdown_rule(std::size_t n) {
  std::string out = "|---|";
  for (std::size_t i = 1; i < n; ++i) out += "---:|";
  return out + "\n";
}

}  // namespace

ordered_json read_json_file(const std::filesystem::path& path) {
  try {
    return ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

ProjectTable project_table_from_json(const ordered_json& j) {
  require_kind(j, "project-mrr");
  ProjectTable t;
  try {
    t.metric = field(j, "metric", "reference table").get<std::string>();
    t.columns = field(j, "columns", "reference table").get<std::vector<std::string>>();
    for (const auto& r : field(j, "rows", "reference table")) {
      ProjectTable::Row row;
      row.model = field(r, "model", "reference table row").get<std::string>();
      for (const auto& v : field(r, "values", "reference table row")) row.values.push_back(v.get<double>());
      row.average = field(r, "average", "reference table row").get<double>();
      if (row.values.size() != t.columns.size()) {
        throw SchemaError(fmt::format("row '{}' has {} values for {} columns", row.model, row.values.size(),
                                      t.columns.size()));
      }
      t.rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed reference table: ") + e.what());
  }
  return t;
}

ProjectTable project_table_from_bcsd(const std::vector<BcsdReport>& reports) {
  if (reports.empty()) throw ValidationError("no retrieval reports to tabulate");
  std::set<std::size_t> common(reports.front().sizes.begin(), reports.front().sizes.end());
  std::set<std::string> projects;
  for (const auto& r : reports) {
    std::set<std::size_t> s(r.sizes.begin(), r.sizes.end());
    std::set<std::size_t> both;
    std::set_intersection(common.begin(), common.end(), s.begin(), s.end(), std::inserter(both, both.end()));
    common = std::move(both);
    for (const auto& [p, row] : r.per_project) projects.insert(p);
  }
  if (common.empty()) throw ValidationError("retrieval reports share no pool size");
  const std::size_t size = *common.rbegin();

  ProjectTable t;
  t.metric = fmt::format("MRR(Pool size {})", size);
  t.columns.assign(projects.begin(), projects.end());
  for (const auto& r : reports) {
    ProjectTable::Row row;
    row.model = r.label;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& p : t.columns) {
      const auto it = r.per_project.find(p);
      if (it == r.per_project.end() || !it->second.mrr.count(size)) {
        row.values.push_back(std::nullopt);
        continue;
      }
      row.values.push_back(it->second.mrr.at(size));
      sum += it->second.mrr.at(size);
      ++n;
    }
    row.average = n == 0 ? 0.0 : sum / static_cast<double>(n);
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string render_project_table(const ProjectTable& table, int decimals) {
  std::vector<std::string> head{"Models"};
  head.insert(head.end(), table.columns.begin(), table.columns.end());
  head.push_back("Average");
  std::string out = fmt::format("{}\n\n", table.metric);
  out += markdown_row(head) + markdown_rule(head.size());
  for (const auto& r : table.rows) {
    std::vector<std::string> cells{r.model};
    for (const auto& v : r.values) cells.push_back(v ? fmt::format("{:.{}f}", *v, decimals) : "-");
    cells.push_back(fmt::format("{:.{}f}", r.average, decimals));
    out += markdown_row(cells);
  }
  return out;
}

std::string render_recall_series(const std::vector<BcsdReport>& reports) {
  std::set<std::size_t> sizes;
  for (const auto& r : reports) sizes.insert(r.sizes.begin(), r.sizes.end());
  std::vector<std::string> head{"Models"};
  for (auto s : sizes) head.push_back(fmt::format("{}", s));
  std::string out = "Recall@1 by pool size\n\n" + markdown_row(head) + markdown_rule(head.size());
  for (const auto& r : reports) {
    std::vector<std::string> cells{r.label};
    for (auto s : sizes) {
      const auto it = r.overall.recall_at_1.find(s);
      cells.push_back(it == r.overall.recall_at_1.end() ? "-" : fmt::format("{:.4f}", it->second));
    }
    out += markdown_row(cells);
  }
  return out;
}

std::vector<BenchReport> bench_rows_from_json(const ordered_json& j) {
  require_kind(j, "bench-scores");
  std::vector<BenchReport> out;
  try {
    for (const auto& r : field(j, "rows", "reference table")) {
      BenchReport b;
      b.label = field(r, "model", "reference table row").get<std::string>();
      for (auto c : kBenchCategories) {
        b.categories[c].score = field(r, std::string(category_label(c)).c_str(), "reference table row").get<double>();
      }
      b.all.score = field(r, "All", "reference table row").get<double>();
      out.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed reference table: ") + e.what());
  }
  return out;
}

std::string render_bench_markdown(const std::vector<BenchReport>& reports) {
  std::vector<std::string> head{"Models"};
  for (auto c : kBenchCategories) head.emplace_back(category_label(c));
  head.push_back("All");
  std::string out = markdown_row(head) + markdown_rule(head.size());
  for (const auto& r : reports) {
    std::vector<std::string> cells{r.label};
    for (auto c : kBenchCategories) {
      const auto it = r.categories.find(c);
      cells.push_back(it == r.categories.end() ? "-" : fmt::format("{:.2f}", it->second.score));
    }
    cells.push_back(fmt::format("{:.2f}", r.all.score));
    out += markdown_row(cells);
  }
  return out;
}

}  // namespace asmalign
