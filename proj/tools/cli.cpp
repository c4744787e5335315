#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "rpmcts/bench.hpp"
#include "rpmcts/error.hpp"

#ifndef RPMCTS_DEFAULT_HARNESS
#define RPMCTS_DEFAULT_HARNESS "harness/harness.py"
#endif

namespace rpmcts::cli {
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUnsolved = 1;
constexpr int kExitUsage = 2;
constexpr int kExitSetup = 3;

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

// Reads `key = value` lines; '#' starts a comment, values may be quoted.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos && line.find('"') > hash) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    std::replace(key.begin(), key.end(), '_', '-');
    out.emplace_back(key, value);
  }
  return out;
}

// Config file values become leading arguments so later command-line flags
// win (options keep the last value).
std::vector<std::string> expand_config(CLI::App& sub, const std::vector<std::string>& args) {
  std::optional<std::string> config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].starts_with("--config=")) config_path = args[i].substr(9);
  }
  if (!config_path) return args;
  std::vector<std::string> expanded;
  for (const auto& [key, value] : read_config_file(*config_path)) {
    if (key == "config") throw ConfigError("config files cannot include other config files");
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
    }
    if (opt == nullptr || opt->get_positional()) throw ConfigError("unknown config key '" + key + "'");
    expanded.push_back("--" + key + "=" + value);
  }
  expanded.insert(expanded.end(), args.begin(), args.end());
  return expanded;
}

void add_engine_options(CLI::App& app, EngineConfig& cfg) {
  app.add_option("--config", "Key/value config file (keys are flag names)");
  app.add_option("--mock-script", cfg.mock_script, "Scripted mock backend replies (JSON); disables HTTP");
  app.add_option("--model", cfg.model, "Chat model name for the HTTP provider");
  app.add_option("--evaluator-model", cfg.evaluator_model, "Model scoring solutions (default: --model)");
  app.add_option("--temperature", cfg.temperature, "Sampling temperature")->capture_default_str();
  app.add_option("--top-p", cfg.top_p, "Nucleus sampling mass")->capture_default_str();
  app.add_option("--embedder", cfg.embedder, "Embedder backend")
      ->check(CLI::IsMember({"trigram", "remote"}))
      ->capture_default_str();
  app.add_option("--embed-dim", cfg.embed_dim, "Trigram embedder dimension")->capture_default_str();
  app.add_option("--embedder-url", cfg.embedder_url, "Remote embedder base URL");
  app.add_option("--harness", cfg.harness, "Sandbox test runner script")->capture_default_str();
  app.add_option("--python", cfg.python, "Interpreter for candidate code")->capture_default_str();
  app.add_option("--per-test-timeout-ms", cfg.search.limits.per_test_timeout_ms, "Per-test time limit")
      ->capture_default_str();
  app.add_option("--memory-mb", cfg.search.limits.memory_mb, "Sandbox address-space limit")->capture_default_str();
  app.add_option("--total-timeout-ms", cfg.search.limits.total_timeout_ms, "Sandbox wall budget per run")
      ->capture_default_str();
}

void add_search_options(CLI::App& app, EngineConfig& cfg) {
  SearchConfig& s = cfg.search;
  app.add_option("--kb", cfg.kb_path, "Knowledge base file");
  app.add_option("--rollout", s.rollout_max, "Maximum search iterations")->capture_default_str();
  app.add_option("--branching", s.branching_b, "Candidate steps per expansion")->capture_default_str();
  app.add_option("--beta", s.ucb_beta, "UCB exploration weight")->capture_default_str();
  app.add_option("--alpha", s.kb_alpha, "Retrieval score weight")->capture_default_str();
  app.add_option("--sim-threshold", s.sim_threshold, "Cosine above which a candidate is redundant")
      ->capture_default_str();
  app.add_option("--gamma", s.eval_gamma, "Weight of the public-test pass rate in the reward")
      ->capture_default_str();
  app.add_option("--success-threshold", s.llm_success_threshold, "Model score needed to stop early")
      ->capture_default_str();
  app.add_option("--seed", s.rng_seed, "Tie-breaking seed")->capture_default_str();
  app.add_flag("--no-kb", cfg.no_kb, "Ignore retrieval scores (alpha = 0)");
  app.add_flag("--no-sim-filter", cfg.no_sim_filter, "Keep redundant expansion candidates");
  app.add_flag("--no-exec-reward", cfg.no_exec_reward, "Reward from the model score only (gamma = 0)");
  app.add_flag("--no-localize", cfg.no_localize, "Skip error localization and prefix grafting");
  app.add_flag("--simulate-all-children", s.simulate_all_children, "Simulate every new child");
}

struct Engine {
  std::unique_ptr<ChatBackend> generator;
  std::unique_ptr<ChatBackend> evaluator;
  std::unique_ptr<Embedder> embedder;
  std::optional<KnowledgeBase> kb;
  std::unique_ptr<Sandbox> sandbox;
  std::unique_ptr<Gateway> gateway;

  SearchDeps deps() { return SearchDeps{*gateway, *embedder, kb ? &*kb : nullptr, *sandbox}; }
};

std::unique_ptr<ChatBackend> make_http_backend(const EngineConfig& cfg, const std::string& model) {
  HttpChatOptions opt;
  opt.base_url = env_or_empty(kApiBaseEnv);
  opt.api_key = env_or_empty(kApiKeyEnv);
  opt.model = model;
  opt.sampling = {cfg.temperature, cfg.top_p, static_cast<std::int64_t>(cfg.search.rng_seed)};
  if (opt.base_url.empty()) throw ConfigError(std::string(kApiBaseEnv) + " is not set and no --mock-script given");
  return std::make_unique<HttpChatBackend>(std::move(opt));
}

std::unique_ptr<Embedder> make_embedder(const EngineConfig& cfg) {
  if (cfg.embedder == "remote") {
    RemoteEmbedderOptions opt;
    opt.base_url = cfg.embedder_url;
    opt.api_key = env_or_empty(kApiKeyEnv);
    return std::make_unique<RemoteEmbedder>(std::move(opt));
  }
  return std::make_unique<TrigramEmbedder>(static_cast<std::size_t>(cfg.embed_dim));
}

Engine make_engine(const EngineConfig& cfg, bool need_sandbox, bool need_kb) {
  Engine e;
  if (!cfg.mock_script.empty()) {
    e.generator = std::make_unique<ScriptedMockBackend>(ScriptedMockBackend::from_file(cfg.mock_script));
  } else {
    e.generator = make_http_backend(cfg, cfg.model);
    if (!cfg.evaluator_model.empty() && cfg.evaluator_model != cfg.model) {
      e.evaluator = make_http_backend(cfg, cfg.evaluator_model);
    }
  }
  e.gateway = std::make_unique<Gateway>(*e.generator, e.evaluator.get());
  e.embedder = make_embedder(cfg);
  if (need_kb && !cfg.kb_path.empty()) {
    e.kb = load_kb(cfg.kb_path);
    if (cfg.embedder == "trigram" && e.kb->embedder_id() != e.embedder->id()) {
      throw ConfigError("knowledge base was built with '" + e.kb->embedder_id() + "', engine uses '" +
                        e.embedder->id() + "'");
    }
  }
  SandboxOptions sb;
  sb.interpreter = cfg.python;
  sb.harness_path = cfg.harness.empty() ? default_harness_path() : cfg.harness;
  if (need_sandbox && !fs::is_regular_file(sb.harness_path)) {
    throw SandboxSetupError("harness not found: " + sb.harness_path.string());
  }
  e.sandbox = std::make_unique<Sandbox>(std::move(sb));
  return e;
}

// --- solve -----------------------------------------------------------------

int cmd_solve(EngineConfig& cfg, const std::string& problem_path, std::string run_dir, std::ostream& out,
              std::ostream& err) {
  Problem problem;
  try {
    problem = load_problem(problem_path);
    cfg.finalize();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    Engine engine = make_engine(cfg, true, true);
    SearchDeps deps = engine.deps();
    SearchResult result = run_search(problem, deps, cfg.search);
    if (run_dir.empty()) run_dir = (fs::path("runs") / problem.id).string();
    write_run_directory(run_dir, result, *engine.gateway);
    out << result.final_code;
    err << "problem " << problem.id << ": " << (result.solved_in_sandbox ? "solved" : "not solved") << " ("
        << to_string(result.termination) << ", " << result.iterations_used << " iterations, "
        << result.token_totals.total() << " tokens); run directory " << run_dir << "\n";
    return result.solved_in_sandbox ? kExitOk : kExitUnsolved;
  } catch (const SandboxSetupError& e) {
    err << "setup error: " << e.what() << "\n";
    return kExitSetup;
  } catch (const ConfigError& e) {
    err << "setup error: " << e.what() << "\n";
    return kExitSetup;
  } catch (const Error& e) {
    err << "setup error: " << e.what() << "\n";
    return kExitSetup;
  }
}

// --- bench -----------------------------------------------------------------

int cmd_bench(EngineConfig& cfg, const std::string& dataset_dir, const std::string& method_name,
              const std::string& out_dir, long budget_ms, const std::string& compare_with, std::ostream& out,
              std::ostream& err) {
  try {
    cfg.finalize();
    const BenchMethod method = bench_method_from_string(method_name);
    std::vector<Problem> problems = load_dataset(dataset_dir);
    if (problems.empty()) throw EmptyDatasetError(dataset_dir + ": no *.problem.json files");
    Engine engine = make_engine(cfg, true, true);
    SearchDeps deps = engine.deps();
    BenchOptions opt;
    opt.problem_budget = std::chrono::milliseconds(budget_ms);
    if (!out_dir.empty()) opt.out_dir = out_dir;
    BenchReport report = run_bench(problems, method, cfg.search, deps, opt);
    out << report.summary_json().dump(2) << "\n";
    if (!compare_with.empty()) {
      BenchReport baseline = load_bench_report(compare_with);
      out << compare_reports(baseline, report);
      if (!out_dir.empty()) {
        std::ofstream csv(fs::path(out_dir) / "comparison.csv", std::ios::binary | std::ios::trunc);
        csv << compare_reports_csv(baseline, report);
        std::ofstream txt(fs::path(out_dir) / "comparison.txt", std::ios::binary | std::ios::trunc);
        txt << compare_reports(baseline, report);
      }
    }
    return kExitOk;
  } catch (const EmptyDatasetError& e) {
    err << "error: EmptyDatasetError: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SandboxSetupError& e) {
    err << "setup error: " << e.what() << "\n";
    return kExitSetup;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

// --- build-kb --------------------------------------------------------------

int cmd_build_kb(EngineConfig& cfg, const std::string& corpus_dir, const std::string& out_path,
                 const std::vector<std::string>& categories_flag, std::ostream& out, std::ostream& err) {
  std::vector<fs::path> files;
  if (fs::is_directory(corpus_dir)) {
    for (const auto& entry : fs::directory_iterator(corpus_dir)) {
      if (entry.is_regular_file() && entry.path().filename().string().ends_with(".corpus.json")) {
        files.push_back(entry.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    err << "error: " << corpus_dir << ": no *.corpus.json files\n";
    return kExitUsage;
  }
  try {
    const std::vector<std::string>& categories = categories_flag.empty() ? default_categories() : categories_flag;
    std::optional<Engine> engine;
    std::vector<CorpusItem> corpus;
    for (const auto& f : files) {
      std::ifstream in(f, std::ios::binary);
      Json j;
      try {
        j = Json::parse(in);
      } catch (const Json::parse_error& e) {
        throw ParseError(f.string() + ": " + e.what());
      }
      CorpusItem item;
      try {
        item.problem_id = j.at("id").get<std::string>();
        item.statement = j.at("statement").get<std::string>();
        item.category = j.at("category").get<std::string>();
      } catch (const Json::exception& e) {
        throw ParseError(f.string() + ": " + e.what());
      }
      if (std::find(categories.begin(), categories.end(), item.category) == categories.end()) {
        throw UnknownCategoryError(f.string() + ": entry '" + item.problem_id + "' has unknown category '" +
                                   item.category + "'");
      }
      if (auto it = j.find("steps"); it != j.end()) {
        int idx = 1;
        for (const auto& s : *it) item.steps.push_back(make_step(idx++, s.get<std::string>()));
      } else if (auto code = j.find("solution_code"); code != j.end()) {
        if (!engine) engine.emplace(make_engine(cfg, false, false));
        item.steps = engine->gateway->decompose_solution(item.statement, code->get<std::string>());
      } else {
        throw EmptyStepsError(f.string() + ": entry '" + item.problem_id + "' has neither steps nor solution_code");
      }
      corpus.push_back(std::move(item));
    }
    // Steps-only corpora need no model backend.
    std::unique_ptr<Embedder> embedder = engine ? nullptr : make_embedder(cfg);
    KnowledgeBase kb = build_kb(corpus, engine ? *engine->embedder : *embedder, categories);
    save_kb(kb, out_path);
    std::set<std::string> used;
    for (const auto& [cat, shard] : kb.shards()) {
      if (!shard.empty()) used.insert(cat);
    }
    out << "problems: " << corpus.size() << "\n";
    out << "entries: " << kb.size() << "\n";
    out << "categories:";
    for (const auto& c : used) out << " " << c << "=" << kb.shards().at(c).size();
    out << "\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

// --- inspect-tree ----------------------------------------------------------

int cmd_inspect(const std::string& tree_path, std::string result_path, std::uint64_t seed, std::ostream& out,
                std::ostream& err) {
  try {
    std::ifstream in(tree_path, std::ios::binary);
    if (!in) throw ParseError(tree_path + ": cannot open");
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ParseError(tree_path + ": " + e.what());
    }
    SearchTree tree = SearchTree::from_json(j);

    if (result_path.empty()) {
      fs::path sibling = fs::path(tree_path).parent_path() / "result.json";
      if (fs::is_regular_file(sibling)) result_path = sibling.string();
    }
    std::vector<int> best;
    if (!result_path.empty()) {
      std::ifstream rin(result_path, std::ios::binary);
      best = Json::parse(rin).at("best_path").get<std::vector<int>>();
    } else {
      Rng rng(seed);
      try {
        best = tree.path_ids(best_leaf(tree, rng));
      } catch (const NoSimulatedLeafError&) {
      }
    }
    const std::set<int> on_path(best.begin(), best.end());

    out << "# nodes: " << tree.size() << "  best path:";
    for (int id : best) out << " " << id;
    out << "\n";
    std::vector<std::pair<int, int>> stack = {{0, 0}};
    while (!stack.empty()) {
      auto [id, depth] = stack.back();
      stack.pop_back();
      const TreeNode& n = tree.node(id);
      char stats[128];
      std::snprintf(stats, sizeof stats, "Q=%.4f N=%d K=%.4f", n.q, n.n, n.k);
      out << (on_path.count(id) ? "* " : "  ") << std::string(static_cast<std::size_t>(depth) * 2, ' ') << "[" << id
          << "] " << stats << " " << to_string(n.status) << (n.grafted ? " grafted" : "") << "  "
          << (n.step ? n.step->text : std::string("<problem>")) << "\n";
      for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.emplace_back(*it, depth + 1);
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace

void EngineConfig::finalize() {
  search.sim_filter = !no_sim_filter;
  search.localize = !no_localize;
  if (no_kb) search.kb_alpha = 0.0;
  if (no_exec_reward) search.eval_gamma = 0.0;
  if (embed_dim <= 0) throw ConfigError("embed-dim must be positive");
  search.validate();
}

std::string default_harness_path() { return RPMCTS_DEFAULT_HARNESS; }

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Monte Carlo tree search over algorithmic steps for code generation", "rpmcts"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  EngineConfig cfg;

  auto* solve = app.add_subcommand("solve", "Search for a solution to one problem");
  std::string problem_path;
  std::string run_dir;
  solve->add_option("problem", problem_path, "Problem file (*.problem.json)")->required();
  solve->add_option("--run-dir", run_dir, "Output directory (default runs/<problem id>)");
  add_engine_options(*solve, cfg);
  add_search_options(*solve, cfg);

  auto* bench = app.add_subcommand("bench", "Score a method on a dataset directory");
  std::string dataset_dir;
  std::string method = "rpm_mcts";
  std::string out_dir;
  long budget_ms = 600000;
  std::string compare_with;
  bench->add_option("dataset", dataset_dir, "Directory of *.problem.json")->required();
  bench->add_option("--method", method, "rpm_mcts | rpm_mcts_no_kb | base_direct")->capture_default_str();
  bench->add_option("--out-dir", out_dir, "Where bench_report.jsonl and bench_summary.json go");
  bench->add_option("--problem-budget-ms", budget_ms, "Per-problem wall-clock budget")->capture_default_str();
  bench->add_option("--compare-with", compare_with, "Baseline bench_report.jsonl to diff against");
  add_engine_options(*bench, cfg);
  add_search_options(*bench, cfg);

  auto* build = app.add_subcommand("build-kb", "Build a knowledge base from solved problems");
  std::string corpus_dir;
  std::string kb_out;
  std::vector<std::string> categories;
  build->add_option("corpus", corpus_dir, "Directory of *.corpus.json")->required();
  build->add_option("--out", kb_out, "Knowledge base file to write")->required();
  build->add_option("--categories", categories, "Allowed category labels (default: built-in 14)")->delimiter(',');
  add_engine_options(*build, cfg);

  auto* inspect = app.add_subcommand("inspect-tree", "Render a saved search tree");
  std::string tree_path;
  std::string result_path;
  std::uint64_t inspect_seed = 0;
  inspect->add_option("tree", tree_path, "tree.json from a run directory")->required();
  inspect->add_option("--result", result_path, "result.json whose best path is highlighted");
  inspect->add_option("--seed", inspect_seed, "Tie-breaking seed when no result.json is present");

  std::vector<std::string> args = raw_args;
  try {
    if (!args.empty()) {
      for (CLI::App* sub : {solve, bench, build}) {
        if (args.front() == sub->get_name()) {
          std::vector<std::string> rest(args.begin() + 1, args.end());
          rest = expand_config(*sub, rest);
          rest.insert(rest.begin(), args.front());
          args = std::move(rest);
        }
      }
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (solve->parsed()) return cmd_solve(cfg, problem_path, run_dir, out, err);
  if (bench->parsed()) return cmd_bench(cfg, dataset_dir, method, out_dir, budget_ms, compare_with, out, err);
  if (build->parsed()) return cmd_build_kb(cfg, corpus_dir, kb_out, categories, out, err);
  if (inspect->parsed()) return cmd_inspect(tree_path, result_path, inspect_seed, out, err);
  return kExitUsage;
}

}  // namespace rpmcts::cli
