#include "rpmcts/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "rpmcts/error.hpp"

namespace rpmcts {
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

Json totals_json(const TokenTotals& t) {
  return {{"prompt_tokens", t.prompt_tokens}, {"completion_tokens", t.completion_tokens}, {"calls", t.calls}};
}

std::map<std::string, const BenchRecord*> index_by_id(const BenchReport& r) {
  std::map<std::string, const BenchRecord*> out;
  for (const auto& rec : r.records) out[rec.problem_id] = &rec;
  return out;
}

void check_same_ids(const BenchReport& a, const BenchReport& b) {
  auto ia = index_by_id(a);
  auto ib = index_by_id(b);
  if (ia.size() != ib.size() ||
      !std::equal(ia.begin(), ia.end(), ib.begin(), [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw MismatchedDatasetError("reports cover different problem sets");
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Tests used to score pass@1: private ones, or public ones for problems
// that ship none.
const std::vector<TestCase>& scoring_tests(const Problem& p) {
  return p.private_tests.empty() ? p.public_tests : p.private_tests;
}

BenchRecord run_one(const Problem& problem, BenchMethod method, const SearchConfig& config, SearchDeps& deps,
                    const BenchOptions& options) {
  BenchRecord rec;
  rec.problem_id = problem.id;
  rec.method = method;
  const auto start = Clock::now();
  const TokenTotals before = deps.gateway.ledger().totals();
  try {
    std::string code;
    if (method == BenchMethod::kBaseDirect) {
      code = deps.gateway.generate_direct(problem);
      rec.iterations_used = 0;
      rec.public_pass_rate =
          deps.sandbox.run_tests(code, problem.entry_point, problem.public_tests, config.limits).pass_rate;
    } else {
      SearchConfig cfg = config;
      if (method == BenchMethod::kRpmMctsNoKb) cfg.kb_alpha = 0.0;
      cfg.time_budget = options.problem_budget;
      SearchResult res = run_search(problem, deps, cfg);
      code = res.final_code;
      rec.iterations_used = res.iterations_used;
      rec.public_pass_rate = res.final_public_pass_rate;
    }
    if (!code.empty()) {
      SandboxReport priv = deps.sandbox.run_tests(code, problem.entry_point, scoring_tests(problem), config.limits);
      rec.passed_private = priv.all_passed();
    }
  } catch (const std::exception& e) {
    rec.passed_private = false;
    rec.error = e.what();
  }
  rec.tokens = deps.gateway.ledger().totals() - before;
  rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
  return rec;
}

}  // namespace

std::string_view to_string(BenchMethod method) {
  switch (method) {
    case BenchMethod::kRpmMcts: return "rpm_mcts";
    case BenchMethod::kRpmMctsNoKb: return "rpm_mcts_no_kb";
    case BenchMethod::kBaseDirect: return "base_direct";
  }
  return "rpm_mcts";
}

BenchMethod bench_method_from_string(std::string_view s) {
  if (s == "rpm_mcts") return BenchMethod::kRpmMcts;
  if (s == "rpm_mcts_no_kb") return BenchMethod::kRpmMctsNoKb;
  if (s == "base_direct") return BenchMethod::kBaseDirect;
  throw ConfigError("unknown bench method '" + std::string(s) + "'");
}

Json BenchRecord::to_json() const {
  return {{"problem_id", problem_id},
          {"method", to_string(method)},
          {"passed_private", passed_private},
          {"public_pass_rate", public_pass_rate},
          {"tokens", totals_json(tokens)},
          {"wall_ms", wall_ms},
          {"iterations_used", iterations_used},
          {"error", error ? Json(*error) : Json(nullptr)}};
}

BenchRecord BenchRecord::from_json(const Json& j) {
  BenchRecord r;
  try {
    r.problem_id = j.at("problem_id").get<std::string>();
    r.method = bench_method_from_string(j.at("method").get<std::string>());
    r.passed_private = j.at("passed_private").get<bool>();
    r.public_pass_rate = j.at("public_pass_rate").get<double>();
    const Json& t = j.at("tokens");
    r.tokens = {t.at("prompt_tokens").get<std::int64_t>(), t.at("completion_tokens").get<std::int64_t>(),
                t.at("calls").get<std::int64_t>()};
    r.wall_ms = j.at("wall_ms").get<long>();
    r.iterations_used = j.at("iterations_used").get<int>();
    if (auto it = j.find("error"); it != j.end() && !it->is_null()) r.error = it->get<std::string>();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("bench record: ") + e.what());
  }
  return r;
}

Json BenchReport::summary_json() const {
  std::int64_t total_tokens = 0;
  std::int64_t solved = 0;
  for (const auto& r : records) {
    total_tokens += r.tokens.total();
    solved += r.passed_private ? 1 : 0;
  }
  return {{"method", to_string(method)},
          {"problems", records.size()},
          {"solved", solved},
          {"pass_at_1", pass_at_1},
          {"mean_tokens", mean_tokens},
          {"total_tokens", total_tokens}};
}

BenchReport summarize(BenchMethod method, std::vector<BenchRecord> records) {
  BenchReport report;
  report.method = method;
  report.records = std::move(records);
  if (report.records.empty()) return report;
  std::int64_t solved = 0;
  std::int64_t tokens = 0;
  for (const auto& r : report.records) {
    solved += r.passed_private ? 1 : 0;
    tokens += r.tokens.total();
  }
  const auto n = static_cast<double>(report.records.size());
  report.pass_at_1 = static_cast<double>(solved) / n;
  report.mean_tokens = static_cast<double>(tokens) / n;
  return report;
}

BenchReport run_bench(const fs::path& dataset_dir, BenchMethod method, const SearchConfig& config,
                      SearchDeps& deps, const BenchOptions& options) {
  std::vector<Problem> problems = load_dataset(dataset_dir);
  if (problems.empty()) throw EmptyDatasetError(dataset_dir.string() + ": no *.problem.json files");
  return run_bench(problems, method, config, deps, options);
}

BenchReport run_bench(const std::vector<Problem>& problems, BenchMethod method, const SearchConfig& config,
                      SearchDeps& deps, const BenchOptions& options) {
  if (problems.empty()) throw EmptyDatasetError("dataset has no problems");
  config.validate();
  std::optional<std::ofstream> jsonl;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    jsonl.emplace(*options.out_dir / "bench_report.jsonl", std::ios::binary | std::ios::trunc);
  }
  std::vector<BenchRecord> records;
  for (const auto& p : problems) {
    records.push_back(run_one(p, method, config, deps, options));
    if (jsonl) *jsonl << records.back().to_json().dump() << '\n' << std::flush;
  }
  BenchReport report = summarize(method, std::move(records));
  if (options.out_dir) {
    std::ofstream summary(*options.out_dir / "bench_summary.json", std::ios::binary | std::ios::trunc);
    summary << report.summary_json().dump(2) << '\n';
  }
  return report;
}

void write_bench_outputs(const fs::path& dir, const BenchReport& report) {
  fs::create_directories(dir);
  std::ofstream jsonl(dir / "bench_report.jsonl", std::ios::binary | std::ios::trunc);
  for (const auto& r : report.records) jsonl << r.to_json().dump() << '\n';
  std::ofstream summary(dir / "bench_summary.json", std::ios::binary | std::ios::trunc);
  summary << report.summary_json().dump(2) << '\n';
}

BenchReport load_bench_report(const fs::path& jsonl_path) {
  std::ifstream in(jsonl_path, std::ios::binary);
  if (!in) throw ParseError(jsonl_path.string() + ": cannot open");
  std::vector<BenchRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      records.push_back(BenchRecord::from_json(Json::parse(line)));
    } catch (const Json::parse_error& e) {
      throw ParseError(jsonl_path.string() + ": " + e.what());
    }
  }
  const BenchMethod method = records.empty() ? BenchMethod::kRpmMcts : records.front().method;
  return summarize(method, std::move(records));
}

std::string compare_reports(const BenchReport& a, const BenchReport& b) {
  check_same_ids(a, b);
  auto ia = index_by_id(a);
  auto ib = index_by_id(b);
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %8s %8s %12s %12s %12s\n", "problem", "pass_a", "pass_b", "tokens_a",
                "tokens_b", "tokens_delta");
  out << line;
  for (const auto& [id, ra] : ia) {
    const BenchRecord* rb = ib.at(id);
    std::snprintf(line, sizeof line, "%-24s %8d %8d %12lld %12lld %+12lld\n", id.c_str(), ra->passed_private ? 1 : 0,
                  rb->passed_private ? 1 : 0, static_cast<long long>(ra->tokens.total()),
                  static_cast<long long>(rb->tokens.total()),
                  static_cast<long long>(rb->tokens.total() - ra->tokens.total()));
    out << line;
  }
  out << "pass@1: " << fmt("%.4f", a.pass_at_1) << " -> " << fmt("%.4f", b.pass_at_1)
      << " (delta " << fmt("%+.4f", b.pass_at_1 - a.pass_at_1) << ")\n";
  out << "mean tokens: " << fmt("%.1f", a.mean_tokens) << " -> " << fmt("%.1f", b.mean_tokens) << " (delta "
      << fmt("%+.1f", b.mean_tokens - a.mean_tokens) << ")\n";
  return out.str();
}

std::string compare_reports_csv(const BenchReport& a, const BenchReport& b) {
  check_same_ids(a, b);
  auto ia = index_by_id(a);
  auto ib = index_by_id(b);
  std::ostringstream out;
  out << "problem_id,passed_a,passed_b,tokens_a,tokens_b,tokens_delta\n";
  for (const auto& [id, ra] : ia) {
    const BenchRecord* rb = ib.at(id);
    out << id << ',' << (ra->passed_private ? 1 : 0) << ',' << (rb->passed_private ? 1 : 0) << ','
        << ra->tokens.total() << ',' << rb->tokens.total() << ',' << (rb->tokens.total() - ra->tokens.total())
        << '\n';
  }
  out << "TOTAL," << fmt("%.6f", a.pass_at_1) << ',' << fmt("%.6f", b.pass_at_1) << ',' << fmt("%.6f", a.mean_tokens)
      << ',' << fmt("%.6f", b.mean_tokens) << ',' << fmt("%.6f", b.mean_tokens - a.mean_tokens) << '\n';
  return out.str();
}

}  // namespace rpmcts
