#pragma once

#include "asmalign/bcsd.hpp"
#include "asmalign/bench.hpp"
#include "asmalign/jsonl.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace asmalign {

// Per-project retrieval table: one row per model, one column per project and
// an Average column.
struct ProjectTable {
  std::string metric;
  std::vector<std::string> columns;
  struct Row {
    std::string model;
    std::vector<std::optional<double>> values;
    double average = 0.0;
  };
  std::vector<Row> rows;
};

/// Reads a "reference-table/v1" fixture with "kind": "project-mrr":
///   {"metric", "columns":[...], "rows":[{"model", "values":[...], "average"}]}
/// Values are rendered as given; nothing is recomputed.
ProjectTable project_table_from_json(const ordered_json& j);

// MRR at the largest pool size common to all reports, per project; the
// average is the unweighted mean over the projects a report covers.
ProjectTable project_table_from_bcsd(const std::vector<BcsdReport>& reports);

std::string render_project_table(const ProjectTable& table, int decimals = 3);

// Recall@1 by pool size, one row per report, sizes ascending.
std::string render_recall_series(const std::vector<BcsdReport>& reports);

// Reads a "reference-table/v1" fixture with "kind": "bench-scores":
//   {"rows":[{"model", "Conversation", "Detail description", "Complex reasoning", "All"}]}
std::vector<BenchReport> bench_rows_from_json(const ordered_json& j);

std::string render_bench_markdown(const std::vector<BenchReport>& reports);

ordered_json read_json_file(const std::filesystem::path& path);

}  // namespace asmalign
