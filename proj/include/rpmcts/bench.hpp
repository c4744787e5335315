#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rpmcts/search.hpp"

namespace rpmcts {

enum class BenchMethod { kRpmMcts, kRpmMctsNoKb, kBaseDirect };

std::string_view to_string(BenchMethod method);
BenchMethod bench_method_from_string(std::string_view s);

struct BenchRecord {
  std::string problem_id;
  BenchMethod method = BenchMethod::kRpmMcts;
  bool passed_private = false;
  double public_pass_rate = 0.0;
  TokenTotals tokens;
  long wall_ms = 0;
  int iterations_used = 0;
  std::optional<std::string> error;

  Json to_json() const;
  static BenchRecord from_json(const Json& j);
};

struct BenchReport {
  BenchMethod method = BenchMethod::kRpmMcts;
  std::vector<BenchRecord> records;
  double pass_at_1 = 0.0;
  double mean_tokens = 0.0;

  Json summary_json() const;
};

struct BenchOptions {
  // Per-problem wall-clock budget for the search.
  std::chrono::milliseconds problem_budget{std::chrono::minutes(10)};
  // When set, bench_report.jsonl and bench_summary.json land here.
  std::optional<std::filesystem::path> out_dir;
};

// pass@1 = solved / total; mean_tokens = mean of per-record token totals.
BenchReport summarize(BenchMethod method, std::vector<BenchRecord> records);

// Runs `method` on every problem in the directory and scores private tests.
// A failing problem is recorded, never fatal. Throws EmptyDatasetError.
BenchReport run_bench(const std::filesystem::path& dataset_dir, BenchMethod method, const SearchConfig& config,
                      SearchDeps& deps, const BenchOptions& options = {});
BenchReport run_bench(const std::vector<Problem>& problems, BenchMethod method, const SearchConfig& config,
                      SearchDeps& deps, const BenchOptions& options = {});

void write_bench_outputs(const std::filesystem::path& dir, const BenchReport& report);
BenchReport load_bench_report(const std::filesystem::path& jsonl_path);

// Per-problem deltas (b - a) sorted by id plus aggregate deltas. Throws
// MismatchedDatasetError when the problem id sets differ.
std::string compare_reports(const BenchReport& a, const BenchReport& b);
std::string compare_reports_csv(const BenchReport& a, const BenchReport& b);

}  // namespace rpmcts
