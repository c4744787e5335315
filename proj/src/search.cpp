#include "rpmcts/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rpmcts/error.hpp"

namespace rpmcts {
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

// Index into `ties`, drawing from the rng only when there is a choice.
std::size_t break_tie(std::size_t count, Rng& rng) {
  return count <= 1 ? 0 : static_cast<std::size_t>(rng() % count);
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

std::string_view to_string(NodeStatus status) {
  switch (status) {
    case NodeStatus::kFresh: return "fresh";
    case NodeStatus::kSimulated: return "simulated";
    case NodeStatus::kTerminalSuccess: return "terminal_success";
  }
  return "fresh";
}

NodeStatus node_status_from_string(std::string_view s) {
  if (s == "fresh") return NodeStatus::kFresh;
  if (s == "simulated") return NodeStatus::kSimulated;
  if (s == "terminal_success") return NodeStatus::kTerminalSuccess;
  throw ParseError("unknown node status '" + std::string(s) + "'");
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::kEarlySuccess: return "early_success";
    case Termination::kRolloutExhausted: return "rollout_exhausted";
    case Termination::kTimeBudget: return "time_budget";
  }
  return "rollout_exhausted";
}

// ---------------------------------------------------------------------------
// SearchTree

SearchTree::SearchTree() { nodes_.push_back(TreeNode{}); }

int SearchTree::add_child(int parent, Step step, double k, bool grafted) {
  const int id = static_cast<int>(nodes_.size());
  TreeNode child;
  child.id = id;
  child.parent = parent;
  step.index = depth(parent) + 1;
  child.step = std::move(step);
  child.k = k;
  child.grafted = grafted;
  nodes_.push_back(std::move(child));
  node(parent).children.push_back(id);
  return id;
}

std::vector<int> SearchTree::path_ids(int id) const {
  std::vector<int> path;
  for (std::optional<int> cur = id; cur; cur = node(*cur).parent) path.push_back(*cur);
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<Step> SearchTree::path_steps(int id) const {
  std::vector<Step> steps;
  for (int n : path_ids(id)) {
    if (node(n).step) steps.push_back(*node(n).step);
  }
  return steps;
}

int SearchTree::depth(int id) const { return static_cast<int>(path_ids(id).size()) - 1; }

const Reflection* SearchTree::nearest_reflection(int id) const {
  for (std::optional<int> cur = id; cur; cur = node(*cur).parent) {
    if (node(*cur).reflection) return &*node(*cur).reflection;
  }
  return nullptr;
}

Json SearchTree::to_json() const {
  Json nodes = Json::array();
  for (const auto& n : nodes_) {
    Json j = {{"id", n.id},
              {"parent", n.parent ? Json(*n.parent) : Json(nullptr)},
              {"step", n.step ? Json(n.step->text) : Json(nullptr)},
              {"q", n.q},
              {"n", n.n},
              {"k", n.k},
              {"status", to_string(n.status)},
              {"grafted", n.grafted},
              {"children", n.children}};
    if (n.reflection) j["reflection"] = n.reflection->text;
    nodes.push_back(std::move(j));
  }
  return {{"version", 1}, {"nodes", nodes}};
}

SearchTree SearchTree::from_json(const Json& j) {
  if (j.value("version", 0) != 1) throw SchemaVersionError("tree: unsupported version");
  SearchTree tree;
  tree.nodes_.clear();
  try {
    for (const auto& jn : j.at("nodes")) {
      TreeNode n;
      n.id = jn.at("id").get<int>();
      if (n.id != static_cast<int>(tree.nodes_.size())) throw ParseError("tree: node ids must be dense");
      if (!jn.at("parent").is_null()) n.parent = jn.at("parent").get<int>();
      if (!jn.at("step").is_null()) {
        n.step = Step{0, jn.at("step").get<std::string>()};
      }
      n.q = jn.at("q").get<double>();
      n.n = jn.at("n").get<int>();
      n.k = jn.at("k").get<double>();
      n.status = node_status_from_string(jn.at("status").get<std::string>());
      n.grafted = jn.value("grafted", false);
      n.children = jn.at("children").get<std::vector<int>>();
      if (auto it = jn.find("reflection"); it != jn.end()) n.reflection = Reflection{it->get<std::string>(), n.id};
      tree.nodes_.push_back(std::move(n));
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("tree: ") + e.what());
  }
  if (tree.nodes_.empty() || tree.nodes_.front().parent) throw ParseError("tree: missing root");
  for (auto& n : tree.nodes_) {
    if (n.step) n.step->index = tree.depth(n.id);
  }
  return tree;
}

// ---------------------------------------------------------------------------
// Config

void SearchConfig::validate() const {
  if (rollout_max < 1) throw ConfigError("rollout_max must be >= 1");
  if (branching_b < 1) throw ConfigError("branching_b must be >= 1");
  if (!(ucb_beta >= 0.0)) throw ConfigError("ucb_beta must be >= 0");
  if (!(kb_alpha >= 0.0)) throw ConfigError("kb_alpha must be >= 0");
  if (!(sim_threshold >= 0.0 && sim_threshold <= 1.0)) throw ConfigError("sim_threshold must be in [0,1]");
  if (!(eval_gamma >= 0.0 && eval_gamma <= 1.0)) throw ConfigError("eval_gamma must be in [0,1]");
  if (!(llm_success_threshold >= 0.0 && llm_success_threshold <= 1.0)) {
    throw ConfigError("llm_success_threshold must be in [0,1]");
  }
  if (limits.per_test_timeout_ms <= 0 || limits.memory_mb <= 0 || limits.total_timeout_ms <= 0) {
    throw ConfigError("sandbox limits must be positive");
  }
  if (time_budget.count() < 0) throw ConfigError("time_budget must be >= 0");
}

// ---------------------------------------------------------------------------
// Selection

double selection_score(double q, double n, double k, double parent_visits, const SearchConfig& config) {
  const double explore = parent_visits > 0.0 ? std::sqrt(std::log(parent_visits) / (1.0 + n)) : 0.0;
  return q + config.ucb_beta * explore + config.kb_alpha * k;
}

double selection_score(const TreeNode& node, double parent_visits, const SearchConfig& config) {
  return selection_score(node.q, node.n, node.k, parent_visits, config);
}

int pick_best_child(const SearchTree& tree, const std::vector<int>& candidates, double parent_visits,
                    const SearchConfig& config, Rng& rng) {
  std::vector<int> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int c : candidates) {
    const double s = selection_score(tree.node(c), parent_visits, config);
    if (s > best_score) {
      best_score = s;
      best.assign(1, c);
    } else if (s == best_score) {
      best.push_back(c);
    }
  }
  return best.at(break_tie(best.size(), rng));
}

int select_leaf(const SearchTree& tree, const SearchConfig& config, Rng& rng) {
  int cur = 0;
  while (!tree.node(cur).children.empty()) {
    const TreeNode& n = tree.node(cur);
    cur = pick_best_child(tree, n.children, n.n, config, rng);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Expansion

double node_retrieval_score(const SearchTree& tree, int parent, std::string_view step_text,
                            const Problem& problem, const SearchDeps& deps) {
  if (deps.kb == nullptr || deps.kb->empty()) return 0.0;
  const std::string state = render_prefix(problem.statement, tree.path_steps(parent));
  return retrieval_score(*deps.kb, deps.embedder, state, step_text, problem.category_hint);
}

std::vector<int> expand(SearchTree& tree, int leaf, const Problem& problem, SearchDeps& deps,
                        const SearchConfig& config) {
  if (tree.node(leaf).status == NodeStatus::kTerminalSuccess) {
    throw std::logic_error("expand: node is terminal");
  }
  const std::vector<Step> path = tree.path_steps(leaf);
  const Reflection* reflection = tree.nearest_reflection(leaf);

  std::vector<Step> proposals;
  for (int i = 0; i < config.branching_b; ++i) {
    proposals.push_back(deps.gateway.propose_next_step(problem, path, proposals, reflection));
  }
  if (proposals.empty()) throw ExpansionEmptyError("expand: no candidates");

  std::vector<EmbeddingVector> existing;
  for (int c : tree.node(leaf).children) existing.push_back(deps.embedder.embed(tree.node(c).step->text));

  std::vector<std::size_t> kept;
  std::vector<EmbeddingVector> kept_vectors;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    EmbeddingVector v = deps.embedder.embed(proposals[i].text);
    bool redundant = false;
    if (config.sim_filter) {
      auto too_close = [&](const EmbeddingVector& other) { return cosine(v, other) > config.sim_threshold; };
      redundant = std::any_of(kept_vectors.begin(), kept_vectors.end(), too_close) ||
                  std::any_of(existing.begin(), existing.end(), too_close);
    }
    if (!redundant) {
      kept.push_back(i);
      kept_vectors.push_back(std::move(v));
    }
  }
  if (kept.empty()) kept.push_back(0);

  std::vector<int> ids;
  for (std::size_t i : kept) {
    const double k = node_retrieval_score(tree, leaf, proposals[i].text, problem, deps);
    ids.push_back(tree.add_child(leaf, proposals[i], k));
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Evaluation and reflection

double blend_reward(double r_exec, double r_llm, double gamma) {
  return gamma * r_exec + (1.0 - gamma) * r_llm;
}

SimulationOutcome simulate_evaluate(SearchTree& tree, int node, const Problem& problem, SearchDeps& deps,
                                    const SearchConfig& config) {
  SimulationOutcome out;
  out.node_id = node;
  TreeNode& target = tree.node(node);
  target.status = NodeStatus::kSimulated;

  try {
    out.full_steps = deps.gateway.complete_simulation(problem, tree.path_steps(node));
    out.code = deps.gateway.generate_code(problem, out.full_steps);
  } catch (const Error& e) {
    // No runnable code: nothing to score beyond a zero reward.
    out.error = e.what();
    out.reward = 0.0;
    return out;
  }

  out.report = deps.sandbox.run_tests(out.code, problem.entry_point, problem.public_tests, config.limits);
  const double r_exec = out.report.pass_rate;

  try {
    out.r_llm = deps.gateway.evaluate_solution(problem, out.full_steps, out.code, out.report);
    out.r_llm_available = true;
    out.reward = blend_reward(r_exec, out.r_llm, config.eval_gamma);
  } catch (const Error& e) {
    out.error = e.what();
    out.reward = r_exec;
  }

  if (out.report.all_passed()) {
    for (int id : tree.path_ids(node)) tree.node(id).reflection.reset();
    return out;
  }

  if (config.localize) {
    try {
      const ExecutionVerdict* failing = out.report.first_failure();
      Localization loc = deps.gateway.localize_error(problem, out.full_steps, split_code_blocks(out.code),
                                                     *failing, out.report.feedback_text);
      out.first_error_step = loc.step_index;
      out.localization_warning = loc.warning;
    } catch (const Error& e) {
      out.error = e.what();
    }
  }
  try {
    Reflection r = deps.gateway.reflect(problem, out.full_steps, out.report);
    r.source_node = node;
    out.reflection = r;
    tree.node(node).reflection = std::move(r);
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

std::vector<int> truncate_and_graft(SearchTree& tree, const SimulationOutcome& outcome, const Problem& problem,
                                    const SearchDeps& deps) {
  if (!outcome.first_error_step) throw std::logic_error("truncate_and_graft: no erroneous step");
  const int d = tree.depth(outcome.node_id);
  const int e = *outcome.first_error_step;
  std::vector<int> added;
  int at = outcome.node_id;
  for (int idx = d + 1; idx <= e - 1 && idx <= static_cast<int>(outcome.full_steps.size()); ++idx) {
    const std::string& text = outcome.full_steps[static_cast<std::size_t>(idx - 1)].text;
    const auto& kids = tree.node(at).children;
    auto dup = std::find_if(kids.begin(), kids.end(), [&](int c) { return tree.node(c).step->text == text; });
    if (dup != kids.end()) {
      at = *dup;
      continue;
    }
    const double k = node_retrieval_score(tree, at, text, problem, deps);
    at = tree.add_child(at, Step{idx, text}, k, /*grafted=*/true);
    added.push_back(at);
  }
  return added;
}

void backpropagate(SearchTree& tree, int node, double reward) {
  for (std::optional<int> cur = node; cur; cur = tree.node(*cur).parent) {
    TreeNode& n = tree.node(*cur);
    n.n += 1;
    n.q += (reward - n.q) / n.n;
  }
}

// ---------------------------------------------------------------------------
// Final path

int best_leaf(const SearchTree& tree, Rng& rng) {
  std::vector<int> best;
  for (const auto& n : tree.nodes()) {
    if (!n.parent || n.n < 1) continue;
    const bool has_visited_child =
        std::any_of(n.children.begin(), n.children.end(), [&](int c) { return tree.node(c).n >= 1; });
    if (has_visited_child) continue;
    if (best.empty()) {
      best.push_back(n.id);
      continue;
    }
    const TreeNode& b = tree.node(best.front());
    if (n.q > b.q || (n.q == b.q && n.n > b.n)) {
      best.assign(1, n.id);
    } else if (n.q == b.q && n.n == b.n) {
      best.push_back(n.id);
    }
  }
  if (best.empty()) throw NoSimulatedLeafError("no simulated leaf in tree");
  return best[break_tie(best.size(), rng)];
}

std::vector<Step> extract_best_path(const SearchTree& tree, Rng& rng) {
  return tree.path_steps(best_leaf(tree, rng));
}

// ---------------------------------------------------------------------------
// Driver

Json SearchResult::to_json() const {
  Json steps = Json::array();
  for (const auto& s : final_steps) steps.push_back(s.text);
  return {{"version", 1},
          {"problem_id", problem_id},
          {"final_code", final_code},
          {"final_steps", steps},
          {"solved_in_sandbox", solved_in_sandbox},
          {"termination", to_string(termination)},
          {"iterations_used", iterations_used},
          {"simulations", simulations},
          {"best_path", best_path},
          {"final_public_pass_rate", final_public_pass_rate},
          {"token_totals",
           {{"prompt_tokens", token_totals.prompt_tokens},
            {"completion_tokens", token_totals.completion_tokens},
            {"calls", token_totals.calls}}}};
}

SearchResult run_search(const Problem& problem, SearchDeps& deps, const SearchConfig& config) {
  config.validate();
  const auto start = Clock::now();
  const TokenTotals tokens_before = deps.gateway.ledger().totals();

  SearchResult result;
  result.problem_id = problem.id;
  Rng rng(config.rng_seed);
  SearchTree& tree = result.tree;

  std::optional<SimulationOutcome> best_outcome;
  auto finish = [&]() {
    result.token_totals = deps.gateway.ledger().totals() - tokens_before;
    return std::move(result);
  };

  for (int it = 1; it <= config.rollout_max; ++it) {
    if (config.time_budget.count() > 0 && Clock::now() - start >= config.time_budget) {
      result.termination = Termination::kTimeBudget;
      break;
    }
    result.iterations_used = it;
    const int leaf = select_leaf(tree, config, rng);
    const std::vector<int> fresh = expand(tree, leaf, problem, deps, config);

    std::vector<int> to_simulate = fresh;
    if (!config.simulate_all_children) {
      to_simulate.assign(1, pick_best_child(tree, fresh, tree.node(leaf).n, config, rng));
    }
    for (int id : to_simulate) {
      SimulationOutcome outcome = simulate_evaluate(tree, id, problem, deps, config);
      if (outcome.first_error_step) truncate_and_graft(tree, outcome, problem, deps);
      backpropagate(tree, id, outcome.reward);
      ++result.simulations;

      if (outcome.report.all_passed() && outcome.r_llm_available &&
          outcome.r_llm >= config.llm_success_threshold) {
        tree.node(id).status = NodeStatus::kTerminalSuccess;
        result.termination = Termination::kEarlySuccess;
        result.final_code = outcome.code;
        result.final_steps = outcome.full_steps;
        result.solved_in_sandbox = true;
        result.final_public_pass_rate = outcome.report.pass_rate;
        result.best_path = tree.path_ids(id);
        return finish();
      }
      if (!outcome.code.empty() && (!best_outcome || outcome.reward > best_outcome->reward)) {
        best_outcome = std::move(outcome);
      }
    }
  }

  // No early exit: generate code from the best leaf's path.
  if (result.simulations == 0) return finish();
  const int leaf = best_leaf(tree, rng);
  result.best_path = tree.path_ids(leaf);
  result.final_steps = tree.path_steps(leaf);
  try {
    result.final_code = deps.gateway.generate_code(problem, result.final_steps);
  } catch (const Error&) {
    if (best_outcome) {
      result.final_code = best_outcome->code;
      result.final_steps = best_outcome->full_steps;
    }
  }
  if (!result.final_code.empty()) {
    SandboxReport report =
        deps.sandbox.run_tests(result.final_code, problem.entry_point, problem.public_tests, config.limits);
    result.final_public_pass_rate = report.pass_rate;
    result.solved_in_sandbox = report.all_passed();
  }
  return finish();
}

void write_run_directory(const fs::path& dir, const SearchResult& result, const Gateway& gateway) {
  fs::create_directories(dir);
  write_json(dir / "tree.json", result.tree.to_json());
  write_json(dir / "result.json", result.to_json());
  write_json(dir / "tokens.json", gateway.ledger().to_json());
  const fs::path transcript = dir / "transcript";
  fs::remove_all(transcript);
  gateway.write_transcript(transcript);
}

}  // namespace rpmcts
