#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rpmcts/bench.hpp"
#include "rpmcts/search.hpp"

namespace rpmcts::test {

namespace fs = std::filesystem;

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

std::string harness_path();
Sandbox make_sandbox(int max_workers = 4);

TestCase exact_case(Json args, Json expected);

// add(a, b) with two public tests and two private tests.
Problem add_problem(const std::string& id, const std::string& tag);

Json mock(std::string_view kind, const std::string& response, std::vector<std::string> contains = {});
std::string fenced(const std::string& code);
std::string plan_text(const std::vector<std::string>& steps);

// One root-level branch of a scripted search: the plan a consistent model
// would follow once plan[0] is chosen. Step texts must be unique across the
// scenario.
struct Branch {
  std::vector<std::string> plan;
  std::string code;
  double score = 0.0;
  int first_bad_step = 1;
};

// Mock script for one problem. Root expansions return `proposals` in order.
// Below a node on a branch, expansions continue that branch's plan and
// repeat its last step past the end; simulations return the branch plan,
// which fails the prefix check off the plan.
struct Scenario {
  Problem problem;
  std::vector<std::string> proposals;
  std::vector<Branch> branches;
  std::optional<std::string> direct_code;

  Json script() const;
};

// add(a, b) tagged with `tag`: proposals [mult, good, sub], where only the
// 3-step good branch passes.
Scenario add_scenario(const std::string& id, const std::string& tag);
std::string good_step(const std::string& tag);
std::string good_code();

// As add_scenario, but every branch fails.
Scenario failing_scenario(const std::string& id, const std::string& tag);

// Oracles restating the trigram embedder and cosine from their definitions,
// with the same summation order so results compare bit for bit.
std::vector<double> oracle_trigram(const std::string& text, std::size_t dim);
double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b);
// max(0, max cosine) over every entry, no category index.
double oracle_retrieval(const std::vector<std::vector<double>>& entries, const std::vector<double>& query);

// Synthetic solved problems: problem i has 1 + (i % 5) steps and cycles
// through the default categories.
std::vector<CorpusItem> synthetic_corpus(int problems, std::uint64_t seed);

Json concat_scripts(const std::vector<Json>& scripts);

// KB holding the full good plan of each scenario, under category "math".
KnowledgeBase kb_from_good_branches(const std::vector<Scenario>& scenarios, const Embedder& embedder);

// Mock backend, gateway, trigram embedder, optional KB and sandbox wired
// together.
struct Rig {
  explicit Rig(const Json& script, std::optional<KnowledgeBase> kb = std::nullopt);

  ScriptedMockBackend backend;
  Gateway gateway;
  TrigramEmbedder embedder;
  std::optional<KnowledgeBase> kb;
  Sandbox sandbox;

  SearchDeps deps() { return SearchDeps{gateway, embedder, kb ? &*kb : nullptr, sandbox}; }
};

// In-process CLI invocation.
struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};
CliRun run_cli(const std::vector<std::string>& args);

// Running the built executable.
CliRun run_binary(const std::vector<std::string>& args);

}  // namespace rpmcts::test
