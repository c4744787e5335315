#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rpmcts/embedding.hpp"
#include "rpmcts/knowledge_base.hpp"
#include "rpmcts/llm.hpp"
#include "rpmcts/problem.hpp"
#include "rpmcts/sandbox.hpp"

namespace rpmcts {

using Rng = std::mt19937_64;

enum class NodeStatus { kFresh, kSimulated, kTerminalSuccess };

std::string_view to_string(NodeStatus status);
NodeStatus node_status_from_string(std::string_view s);

// The root stands for the problem and carries no step; every other node
// carries exactly one step. `k` is the cached retrieval score and is never
// changed after creation.
struct TreeNode {
  int id = 0;
  std::optional<int> parent;
  std::optional<Step> step;
  double q = 0.0;
  int n = 0;
  double k = 0.0;
  std::vector<int> children;
  NodeStatus status = NodeStatus::kFresh;
  bool grafted = false;
  std::optional<Reflection> reflection;
};

class SearchTree {
 public:
  SearchTree();

  const TreeNode& root() const { return nodes_.front(); }
  const TreeNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  TreeNode& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  int add_child(int parent, Step step, double k, bool grafted = false);

  // Node ids from the root down to `id`, inclusive.
  std::vector<int> path_ids(int id) const;
  // Steps from the root down to `id` (the root contributes none).
  std::vector<Step> path_steps(int id) const;
  int depth(int id) const;
  // Deepest reflection on the path from `id` up to the root.
  const Reflection* nearest_reflection(int id) const;

  Json to_json() const;
  static SearchTree from_json(const Json& j);

 private:
  std::vector<TreeNode> nodes_;
};

struct SearchConfig {
  int rollout_max = 5;
  int branching_b = 3;
  double ucb_beta = 0.5;
  double kb_alpha = 0.5;
  double sim_threshold = 0.85;
  double eval_gamma = 0.7;
  double llm_success_threshold = 0.9;
  std::uint64_t rng_seed = 0;

  bool sim_filter = true;
  bool localize = true;
  bool simulate_all_children = false;
  SandboxLimits limits;
  // Wall-clock budget for one search; 0 disables it. Checked between
  // iterations.
  std::chrono::milliseconds time_budget{0};

  // Throws ConfigError naming the bad field.
  void validate() const;
};

// Q + beta * sqrt(ln N(s) / (1 + N(s,a))) + alpha * K. The exploration term
// is 0 while the parent is unvisited.
double selection_score(double q, double n, double k, double parent_visits, const SearchConfig& config);
double selection_score(const TreeNode& node, double parent_visits, const SearchConfig& config);

// From the root, repeatedly moves to the child with the highest selection
// score (ties broken by `rng`) until reaching a node without children.
int select_leaf(const SearchTree& tree, const SearchConfig& config, Rng& rng);

// Highest-scoring node among `candidates` (children of one parent).
int pick_best_child(const SearchTree& tree, const std::vector<int>& candidates, double parent_visits,
                    const SearchConfig& config, Rng& rng);

struct SearchDeps {
  Gateway& gateway;
  const Embedder& embedder;
  const KnowledgeBase* kb = nullptr;
  const Sandbox& sandbox;
};

// Retrieval score for appending `step_text` below `parent`.
double node_retrieval_score(const SearchTree& tree, int parent, std::string_view step_text,
                            const Problem& problem, const SearchDeps& deps);

// Proposes up to b steps below `leaf`, drops near-duplicates, and adds the
// survivors as children. Returns the new node ids in generation order.
std::vector<int> expand(SearchTree& tree, int leaf, const Problem& problem, SearchDeps& deps,
                        const SearchConfig& config);

struct SimulationOutcome {
  int node_id = 0;
  std::vector<Step> full_steps;
  std::string code;
  SandboxReport report;
  double r_llm = 0.0;
  bool r_llm_available = false;
  double reward = 0.0;
  std::optional<int> first_error_step;
  std::optional<std::string> localization_warning;
  std::optional<Reflection> reflection;
  // Set when a gateway failure cut the simulation short.
  std::optional<std::string> error;
};

// gamma * r_exec + (1 - gamma) * r_llm
double blend_reward(double r_exec, double r_llm, double gamma);

// Completes the plan from `node`, generates code, runs the public tests,
// scores the result, and on failure localizes the first bad step and
// reflects. The reflection is attached to `node`.
SimulationOutcome simulate_evaluate(SearchTree& tree, int node, const Problem& problem, SearchDeps& deps,
                                    const SearchConfig& config);

// Grafts steps depth+1 .. first_error_step-1 of the simulated plan as a chain
// below the simulated node. An existing child with the same text is reused.
std::vector<int> truncate_and_graft(SearchTree& tree, const SimulationOutcome& outcome,
                                    const Problem& problem, const SearchDeps& deps);

// Running-mean update of every node from `node` up to the root.
void backpropagate(SearchTree& tree, int node, double reward);

// Visited node with no visited children maximizing Q, then N, then `rng`.
// Throws NoSimulatedLeafError when nothing was simulated.
int best_leaf(const SearchTree& tree, Rng& rng);
std::vector<Step> extract_best_path(const SearchTree& tree, Rng& rng);

enum class Termination { kEarlySuccess, kRolloutExhausted, kTimeBudget };
std::string_view to_string(Termination t);

struct SearchResult {
  std::string problem_id;
  std::string final_code;
  std::vector<Step> final_steps;
  bool solved_in_sandbox = false;
  Termination termination = Termination::kRolloutExhausted;
  SearchTree tree;
  TokenTotals token_totals;
  int iterations_used = 0;
  int simulations = 0;
  std::vector<int> best_path;
  double final_public_pass_rate = 0.0;

  Json to_json() const;
};

SearchResult run_search(const Problem& problem, SearchDeps& deps, const SearchConfig& config);

// Writes tree.json, result.json, tokens.json and transcript/.
void write_run_directory(const std::filesystem::path& dir, const SearchResult& result, const Gateway& gateway);

}  // namespace rpmcts
