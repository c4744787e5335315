#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rpmcts/search.hpp"

namespace rpmcts::cli {

// Environment variables read for secrets only.
inline constexpr const char* kApiKeyEnv = "RPM_API_KEY";
inline constexpr const char* kApiBaseEnv = "RPM_API_BASE";

// Everything a command needs to assemble the engine. Flags and config-file
// keys map one-to-one (config keys use the flag name without dashes, with
// '_' or '-' as separator).
struct EngineConfig {
  SearchConfig search;

  std::string mock_script;
  std::string model;
  std::string evaluator_model;
  double temperature = 0.7;
  double top_p = 0.95;

  std::string embedder = "trigram";
  int embed_dim = 256;
  std::string embedder_url;

  std::string kb_path;
  std::string harness;
  std::string python = "python3";

  bool no_kb = false;
  bool no_sim_filter = false;
  bool no_exec_reward = false;
  bool no_localize = false;

  // Applies the ablation switches to `search` and validates.
  void finalize();
};

// Runs the command line `args` (without the program name). Returns the
// process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Path of the bundled test runner.
std::string default_harness_path();

}  // namespace rpmcts::cli
