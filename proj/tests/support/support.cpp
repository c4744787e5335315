#include "support.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <sys/wait.h>

#include "cli.hpp"

namespace rpmcts::test {

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "rpmcts-test-XXXXXX").string();
  if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string harness_path() { return RPMCTS_TEST_HARNESS; }

Sandbox make_sandbox(int max_workers) {
  SandboxOptions opt;
  opt.harness_path = harness_path();
  opt.max_workers = max_workers;
  return Sandbox(opt);
}

TestCase exact_case(Json args, Json expected) {
  TestCase t;
  t.input_args = std::move(args);
  t.expected_output = std::move(expected);
  return t;
}

Problem add_problem(const std::string& id, const std::string& tag) {
  Problem p;
  p.id = id;
  p.statement = "[" + tag + "] Return the sum of the two integers a and b.";
  p.entry_point = "add";
  p.signature_doc = "def add(a: int, b: int) -> int";
  p.public_tests = {exact_case({1, 2}, 3), exact_case({2, 3}, 5)};
  p.private_tests = {exact_case({10, -4}, 6), exact_case({0, 0}, 0)};
  return p;
}

Json mock(std::string_view kind, const std::string& response, std::vector<std::string> contains) {
  Json j = {{"kind", kind}, {"match_digest", "*"}, {"response", response}};
  if (!contains.empty()) j["match_contains"] = contains;
  return j;
}

std::string fenced(const std::string& code) { return "```python\n" + code + "```\n"; }

std::string plan_text(const std::vector<std::string>& steps) {
  std::string out;
  for (const auto& s : steps) out += "STEP: " + s + "\n";
  return out;
}

Json Scenario::script() const {
  Json records = Json::array();
  const std::string& st = problem.statement;
  for (const auto& p : proposals) records.push_back(mock("expand", "STEP: " + p, {st, "STEPS SO FAR:\n(none)\n"}));
  for (const auto& b : branches) {
    const std::string& first = b.plan.front();
    for (std::size_t j = 1; j < b.plan.size(); ++j) {
      std::vector<std::string> path(b.plan.begin(), b.plan.begin() + static_cast<long>(j));
      records.push_back(mock("expand", "STEP: " + b.plan[j], {st, "STEPS SO FAR:\n" + plan_text(path) + "\n"}));
    }
    records.push_back(mock("expand", "STEP: " + b.plan.back(), {st, "STEP: " + b.plan.back() + "\n\n"}));
    records.push_back(mock("simulate", plan_text(b.plan), {"FIXED STEPS:\nSTEP: " + first + "\n"}));
    records.push_back(mock("codegen", fenced(b.code), {"STEPS:\n1. " + first + "\n"}));
    char score[64];
    std::snprintf(score, sizeof score, "SCORE: %.3f", b.score);
    records.push_back(mock("evaluate", score, {"STEPS:\n1. " + first + "\n"}));
    records.push_back(mock("localize", "FIRST_BAD_STEP: " + std::to_string(b.first_bad_step), {"STEP 1: " + first + "\n"}));
    records.push_back(mock("reflect", "Step " + std::to_string(b.first_bad_step) + " of this plan is wrong.",
                           {"PLAN:\nSTEP: " + first + "\n"}));
  }
  if (direct_code) {
    records.push_back(mock("codegen", fenced(*direct_code),
                           {"Write a Python solution to this programming problem.\n\nPROBLEM:\n" + st + "\n"}));
  }
  return records;
}

std::string good_step(const std::string& tag) { return "Read the integers a and b (" + tag + ")"; }

std::string good_code() {
  return "def add(a, b):\n    # STEP 1\n    x, y = a, b\n    # STEP 2\n    s = x + y\n    # STEP 3\n    return s\n";
}

Scenario add_scenario(const std::string& id, const std::string& tag) {
  Scenario s;
  s.problem = add_problem(id, tag);
  const std::string t = " (" + tag + ")";
  const std::string mult = "Multiply a by b to combine them" + t;
  const std::string sub = "Subtract b from a as the combination" + t;
  s.proposals = {mult, good_step(tag), sub};
  s.branches.push_back({{mult, "Return the product" + t},
                        "def add(a, b):\n    # STEP 1\n    r = a * b\n    # STEP 2\n    return r\n", 0.1, 1});
  s.branches.push_back({{good_step(tag), "Add a and b together" + t, "Return the sum" + t}, good_code(), 1.0, 1});
  s.branches.push_back({{sub, "Return the difference" + t},
                        "def add(a, b):\n    # STEP 1\n    r = a - b\n    # STEP 2\n    return r\n", 0.0, 1});
  s.direct_code = "def add(a, b):\n    return a + b\n";
  return s;
}

Scenario failing_scenario(const std::string& id, const std::string& tag) {
  Scenario s = add_scenario(id, tag);
  Branch& good = s.branches[1];
  good.code = "def add(a, b):\n    # STEP 1\n    x, y = a, b\n    # STEP 2\n    s = x + y + 1\n    # STEP 3\n    return s\n";
  good.score = 0.4;
  good.first_bad_step = 2;
  s.direct_code = "def add(a, b):\n    return a - b\n";
  return s;
}

std::vector<double> oracle_trigram(const std::string& text, std::size_t dim) {
  const std::string padded = "\x02" + text + "\x03";
  std::vector<double> counts(dim, 0.0);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    std::uint64_t h = 14695981039346656037ull;
    for (std::size_t j = i; j < i + 3; ++j) {
      h ^= static_cast<unsigned char>(padded[j]);
      h *= 1099511628211ull;
    }
    counts[h % dim] += 1.0;
  }
  double norm = 0.0;
  for (double c : counts) norm += c * c;
  norm = std::sqrt(norm);
  for (double& c : counts) c /= norm;
  return counts;
}

double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return std::clamp(dot / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

double oracle_retrieval(const std::vector<std::vector<double>>& entries, const std::vector<double>& query) {
  double best = 0.0;
  for (const auto& e : entries) best = std::max(best, oracle_cosine(query, e));
  return best;
}

std::vector<CorpusItem> synthetic_corpus(int problems, std::uint64_t seed) {
  static const std::vector<std::string> verbs = {"sort", "scan", "hash", "merge", "count", "split", "reverse",
                                                 "accumulate", "binary search", "push", "pop", "relax"};
  static const std::vector<std::string> nouns = {"the array", "edges", "prefix sums", "the heap", "intervals",
                                                 "the string", "digits", "the grid", "a stack", "the answer"};
  std::mt19937_64 gen(seed);
  std::vector<CorpusItem> out;
  const auto& cats = default_categories();
  for (int i = 0; i < problems; ++i) {
    CorpusItem item;
    item.problem_id = "syn" + std::to_string(i);
    item.statement = "Synthetic problem " + std::to_string(i) + ": " + nouns[gen() % nouns.size()] + " and " +
                     nouns[gen() % nouns.size()] + ".";
    item.category = cats[static_cast<std::size_t>(i) % cats.size()];
    const int n = 1 + i % 5;
    for (int j = 1; j <= n; ++j) {
      item.steps.push_back(make_step(j, verbs[gen() % verbs.size()] + " " + nouns[gen() % nouns.size()]));
    }
    out.push_back(std::move(item));
  }
  return out;
}

Json concat_scripts(const std::vector<Json>& scripts) {
  Json out = Json::array();
  for (const auto& s : scripts) {
    for (const auto& r : s) out.push_back(r);
  }
  return out;
}

KnowledgeBase kb_from_good_branches(const std::vector<Scenario>& scenarios, const Embedder& embedder) {
  std::vector<CorpusItem> corpus;
  for (const auto& sc : scenarios) {
    for (const auto& b : sc.branches) {
      if (b.score < 0.9) continue;
      CorpusItem item{sc.problem.id + "-solved", sc.problem.statement, {}, "math"};
      for (std::size_t i = 0; i < b.plan.size(); ++i) item.steps.push_back(make_step(static_cast<int>(i) + 1, b.plan[i]));
      corpus.push_back(std::move(item));
    }
  }
  return build_kb(corpus, embedder);
}

Rig::Rig(const Json& script, std::optional<KnowledgeBase> kb_in)
    : backend(ScriptedMockBackend::from_json(script)),
      gateway(backend),
      kb(std::move(kb_in)),
      sandbox(make_sandbox()) {}

CliRun run_cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  CliRun r;
  r.code = cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') {
      q += "'\\''";
    } else {
      q += c;
    }
  }
  return q + "'";
}

}  // namespace

CliRun run_binary(const std::vector<std::string>& args) {
  TempDir tmp;
  std::string cmd = shell_quote(RPMCTS_CLI_BIN);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " >" + shell_quote((tmp / "out").string()) + " 2>" + shell_quote((tmp / "err").string());
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(tmp / "out");
  r.err = read_text(tmp / "err");
  return r;
}

}  // namespace rpmcts::test
