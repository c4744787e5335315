#pragma once

#include <filesystem>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "rpmcts/problem.hpp"

namespace rpmcts {

enum class VerdictStatus { kPass, kWrongAnswer, kRuntimeError, kTimeout, kHarnessError };

std::string_view to_string(VerdictStatus status);
VerdictStatus verdict_status_from_string(std::string_view s);

inline constexpr std::size_t kStderrExcerptCap = 4096;

struct ExecutionVerdict {
  int test_index = 0;
  VerdictStatus status = VerdictStatus::kHarnessError;
  std::optional<Json> actual;
  std::string stderr_excerpt;
  // Copied from the test so feedback can be rendered from the report alone.
  Json input_args;
  Json expected_output;

  friend bool operator==(const ExecutionVerdict&, const ExecutionVerdict&) = default;
};

struct SandboxReport {
  std::vector<ExecutionVerdict> verdicts;
  double pass_rate = 0.0;
  long wall_time_ms = 0;
  std::string feedback_text;

  bool all_passed() const { return !verdicts.empty() && pass_rate == 1.0; }
  // First failing verdict, if any.
  const ExecutionVerdict* first_failure() const;
};

struct SandboxLimits {
  int per_test_timeout_ms = 5000;
  int memory_mb = 256;
  int total_timeout_ms = 20000;
};

struct SandboxOptions {
  std::string interpreter = "python3";
  std::filesystem::path harness_path;
  std::filesystem::path scratch_root = std::filesystem::temp_directory_path();
  int max_workers = 4;
  // Extra time the engine grants the in-harness watchdog before it kills
  // the child itself.
  int watchdog_grace_ms = 1000;
};

// Runs candidate Python functions in a child process through the harness.
// Each call owns its child and scratch directory; calls may run
// concurrently up to max_workers.
class Sandbox {
 public:
  explicit Sandbox(SandboxOptions options);

  // One verdict per test, in order. Throws SandboxSetupError when the
  // interpreter or harness cannot be started.
  SandboxReport run_tests(std::string_view code, std::string_view entry_point,
                          const std::vector<TestCase>& tests, const SandboxLimits& limits) const;

  const SandboxOptions& options() const { return options_; }

 private:
  SandboxOptions options_;
  mutable std::counting_semaphore<256> workers_;
};

// (#pass / #verdicts) rounded to the nearest 1e-9.
double pass_rate_of(const std::vector<ExecutionVerdict>& verdicts);

// Deterministic text summary: pass rate plus the first three failures.
std::string render_feedback(const SandboxReport& report);

}  // namespace rpmcts
