#include "rpmcts/sandbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "rpmcts/error.hpp"

namespace rpmcts {
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

// Harness exit codes reserved for harness-level faults.
constexpr int kHarnessJobUnreadable = 1;
constexpr int kHarnessInternalFault = 2;

std::string excerpt(std::string s) {
  if (s.size() > kStderrExcerptCap) s.resize(kStderrExcerptCap);
  return s;
}

fs::path resolve_interpreter(const std::string& interpreter) {
  if (interpreter.find('/') != std::string::npos) {
    if (::access(interpreter.c_str(), X_OK) == 0) return interpreter;
    throw SandboxSetupError("interpreter not executable: " + interpreter);
  }
  const char* path_env = std::getenv("PATH");
  std::stringstream dirs(path_env ? path_env : "/usr/local/bin:/usr/bin:/bin");
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    if (dir.empty()) continue;
    fs::path candidate = fs::path(dir) / interpreter;
    if (::access(candidate.c_str(), X_OK) == 0) return candidate;
  }
  throw SandboxSetupError("interpreter not found on PATH: " + interpreter);
}

class ScratchDir {
 public:
  explicit ScratchDir(const fs::path& root) {
    std::string templ = (root / "rpmcts-sbx-XXXXXX").string();
    if (::mkdtemp(templ.data()) == nullptr) {
      throw SandboxSetupError("cannot create scratch directory under " + root.string() + ": " +
                              std::strerror(errno));
    }
    path_ = templ;
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

class Fd {
 public:
  explicit Fd(int fd = -1) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_;
};

struct Child {
  pid_t pid = -1;
  int out_fd = -1;
};

// Starts `interpreter harness job` in its own process group with stdout on a
// pipe and stderr in the scratch directory.
Child spawn_harness(const fs::path& interpreter, const fs::path& harness, const fs::path& job,
                    const fs::path& scratch, int memory_mb) {
  int out[2];
  int err[2];
  if (::pipe2(out, O_CLOEXEC) != 0 || ::pipe2(err, O_CLOEXEC) != 0) {
    throw SandboxSetupError(std::string("pipe: ") + std::strerror(errno));
  }
  const std::string interp_s = interpreter.string();
  const std::string harness_s = harness.string();
  const std::string job_s = job.string();
  const std::string stderr_s = (scratch / "stderr.txt").string();
  const std::string scratch_s = scratch.string();
  char* argv[] = {const_cast<char*>(interp_s.c_str()), const_cast<char*>(harness_s.c_str()),
                  const_cast<char*>(job_s.c_str()), nullptr};

  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(out[0]); ::close(out[1]); ::close(err[0]); ::close(err[1]);
    throw SandboxSetupError(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    // Only async-signal-safe calls from here on.
    ::setpgid(0, 0);
    int devnull = ::open("/dev/null", O_RDONLY);
    int errfile = ::open(stderr_s.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    if (devnull >= 0) ::dup2(devnull, 0);
    ::dup2(out[1], 1);
    if (errfile >= 0) ::dup2(errfile, 2);
    if (::chdir(scratch_s.c_str()) != 0) {
      int e = errno;
      (void)!::write(err[1], &e, sizeof e);
      ::_exit(127);
    }
    struct rlimit mem{static_cast<rlim_t>(memory_mb) << 20, static_cast<rlim_t>(memory_mb) << 20};
    ::setrlimit(RLIMIT_AS, &mem);
    struct rlimit core{0, 0};
    ::setrlimit(RLIMIT_CORE, &core);
    ::execv(argv[0], argv);
    int e = errno;
    (void)!::write(err[1], &e, sizeof e);
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(out[1]);
  ::close(err[1]);
  int exec_errno = 0;
  ssize_t n;
  do {
    n = ::read(err[0], &exec_errno, sizeof exec_errno);
  } while (n < 0 && errno == EINTR);
  ::close(err[0]);
  if (n > 0) {
    ::close(out[0]);
    int status;
    ::waitpid(pid, &status, 0);
    throw SandboxSetupError("cannot exec " + interp_s + ": " + std::strerror(exec_errno));
  }
  return Child{pid, out[0]};
}

std::string read_file_excerpt(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string s(kStderrExcerptCap, '\0');
  in.read(s.data(), static_cast<std::streamsize>(s.size()));
  s.resize(static_cast<std::size_t>(in.gcount()));
  return s;
}

// Waits for the child to exit, killing its group if it has not exited by
// `deadline`. Returns the wait status.
int reap(pid_t pid, Clock::time_point deadline) {
  int status = 0;
  while (true) {
    pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) break;
    if (Clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {}
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  // Stragglers forked by the candidate share the group.
  ::kill(-pid, SIGKILL);
  return status;
}

ExecutionVerdict make_verdict(int index, const TestCase& test, VerdictStatus status,
                              std::string stderr_text = {}) {
  ExecutionVerdict v;
  v.test_index = index;
  v.status = status;
  v.stderr_excerpt = excerpt(std::move(stderr_text));
  v.input_args = test.input_args;
  v.expected_output = test.expected_output;
  return v;
}

struct LaunchResult {
  enum class End { kComplete, kCompileError, kKilledOnTimeout, kSignaled, kExited, kMalformed };
  End end = End::kComplete;
  int exit_code = 0;
  int signal = 0;
  bool total_budget_hit = false;
  std::string detail;
};

}  // namespace

std::string_view to_string(VerdictStatus status) {
  switch (status) {
    case VerdictStatus::kPass: return "pass";
    case VerdictStatus::kWrongAnswer: return "wrong_answer";
    case VerdictStatus::kRuntimeError: return "runtime_error";
    case VerdictStatus::kTimeout: return "timeout";
    case VerdictStatus::kHarnessError: return "harness_error";
  }
  return "harness_error";
}

VerdictStatus verdict_status_from_string(std::string_view s) {
  if (s == "pass") return VerdictStatus::kPass;
  if (s == "wrong_answer") return VerdictStatus::kWrongAnswer;
  if (s == "runtime_error") return VerdictStatus::kRuntimeError;
  if (s == "timeout") return VerdictStatus::kTimeout;
  if (s == "harness_error") return VerdictStatus::kHarnessError;
  throw ParseError("unknown verdict status '" + std::string(s) + "'");
}

const ExecutionVerdict* SandboxReport::first_failure() const {
  for (const auto& v : verdicts) {
    if (v.status != VerdictStatus::kPass) return &v;
  }
  return nullptr;
}

double pass_rate_of(const std::vector<ExecutionVerdict>& verdicts) {
  if (verdicts.empty()) return 0.0;
  const auto passed = std::count_if(verdicts.begin(), verdicts.end(),
                                    [](const auto& v) { return v.status == VerdictStatus::kPass; });
  const double rate = static_cast<double>(passed) / static_cast<double>(verdicts.size());
  return std::round(rate * 1e9) / 1e9;
}

Sandbox::Sandbox(SandboxOptions options)
    : options_(std::move(options)), workers_(std::clamp(options_.max_workers, 1, 256)) {}

SandboxReport Sandbox::run_tests(std::string_view code, std::string_view entry_point,
                                 const std::vector<TestCase>& tests,
                                 const SandboxLimits& limits) const {
  if (tests.empty()) throw SandboxSetupError("run_tests: no tests");
  if (limits.per_test_timeout_ms <= 0 || limits.memory_mb <= 0 || limits.total_timeout_ms <= 0) {
    throw SandboxSetupError("run_tests: limits must be positive");
  }
  if (!fs::is_regular_file(options_.harness_path)) {
    throw SandboxSetupError("harness not found: " + options_.harness_path.string());
  }
  const fs::path interpreter = resolve_interpreter(options_.interpreter);

  workers_.acquire();
  struct Release {
    std::counting_semaphore<256>& s;
    ~Release() { s.release(); }
  } release{workers_};

  const auto start = Clock::now();
  const auto total_deadline = start + std::chrono::milliseconds(limits.total_timeout_ms);
  ScratchDir scratch(options_.scratch_root);

  std::vector<ExecutionVerdict> verdicts;
  verdicts.reserve(tests.size());
  auto fill_remaining = [&](VerdictStatus status, const std::string& why) {
    for (std::size_t i = verdicts.size(); i < tests.size(); ++i) {
      verdicts.push_back(make_verdict(static_cast<int>(i), tests[i], status, why));
    }
  };

  while (verdicts.size() < tests.size()) {
    if (Clock::now() >= total_deadline) {
      fill_remaining(VerdictStatus::kTimeout, "total time budget exhausted");
      break;
    }
    const std::size_t offset = verdicts.size();
    Json job_tests = Json::array();
    for (std::size_t i = offset; i < tests.size(); ++i) job_tests.push_back(to_json(tests[i]));
    Json job = {{"code", std::string(code)},
                {"entry_point", std::string(entry_point)},
                {"tests", job_tests},
                {"limits", {{"per_test_timeout_ms", limits.per_test_timeout_ms}}}};
    const fs::path job_path = scratch.path() / "job.json";
    {
      std::ofstream out(job_path, std::ios::binary | std::ios::trunc);
      out << job.dump();
      if (!out) throw SandboxSetupError("cannot write job file " + job_path.string());
    }

    Child child = spawn_harness(interpreter, options_.harness_path, job_path, scratch.path(),
                                limits.memory_mb);
    Fd out_fd(child.out_fd);
    LaunchResult launch;
    std::string buffer;
    auto progress = Clock::now();
    const auto per_test = std::chrono::milliseconds(limits.per_test_timeout_ms + options_.watchdog_grace_ms);
    bool eof = false;
    bool stop = false;

    while (!eof && !stop) {
      const auto now = Clock::now();
      const auto line_deadline = std::min(total_deadline, progress + per_test);
      if (now >= line_deadline) {
        ::kill(-child.pid, SIGKILL);
        launch.end = LaunchResult::End::kKilledOnTimeout;
        launch.total_budget_hit = line_deadline == total_deadline;
        stop = true;
        break;
      }
      const auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(line_deadline - now).count() + 1;
      pollfd pfd{out_fd.get(), POLLIN, 0};
      int pr = ::poll(&pfd, 1, static_cast<int>(wait_ms));
      if (pr < 0) {
        if (errno == EINTR) continue;
        throw SandboxSetupError(std::string("poll: ") + std::strerror(errno));
      }
      if (pr == 0) continue;
      char chunk[4096];
      ssize_t n = ::read(out_fd.get(), chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        eof = true;
        break;
      }
      if (n == 0) {
        eof = true;
        break;
      }
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t nl;
      while (!stop && (nl = buffer.find('\n')) != std::string::npos) {
        std::string line = buffer.substr(0, nl);
        buffer.erase(0, nl + 1);
        progress = Clock::now();
        Json j;
        try {
          j = Json::parse(line);
          const int rel = j.at("test_index").get<int>();
          const auto status = verdict_status_from_string(j.at("status").get<std::string>());
          std::string err = j.value("stderr_excerpt", std::string());
          if (rel == -1 && status == VerdictStatus::kRuntimeError) {
            fill_remaining(VerdictStatus::kRuntimeError, err);
            launch.end = LaunchResult::End::kCompileError;
            stop = true;
            break;
          }
          const std::size_t abs_index = offset + static_cast<std::size_t>(rel);
          if (rel < 0 || abs_index != verdicts.size() || status == VerdictStatus::kHarnessError) {
            throw ParseError("unexpected verdict line: " + line);
          }
          ExecutionVerdict v = make_verdict(static_cast<int>(abs_index), tests[abs_index], status, err);
          if (auto it = j.find("actual"); it != j.end() && !it->is_null()) v.actual = *it;
          verdicts.push_back(std::move(v));
        } catch (const std::exception& e) {
          launch.end = LaunchResult::End::kMalformed;
          launch.detail = e.what();
          stop = true;
          break;
        }
        if (verdicts.size() == tests.size()) stop = true;
      }
    }

    const auto reap_deadline = std::min(total_deadline, Clock::now() + std::chrono::milliseconds(200));
    const int status = reap(child.pid, reap_deadline);
    if (launch.end == LaunchResult::End::kComplete && verdicts.size() < tests.size()) {
      if (WIFSIGNALED(status)) {
        launch.end = LaunchResult::End::kSignaled;
        launch.signal = WTERMSIG(status);
      } else {
        launch.end = LaunchResult::End::kExited;
        launch.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
      }
    }

    const std::size_t cur = verdicts.size();
    switch (launch.end) {
      case LaunchResult::End::kComplete:
      case LaunchResult::End::kCompileError:
        break;
      case LaunchResult::End::kKilledOnTimeout:
        if (launch.total_budget_hit) {
          fill_remaining(VerdictStatus::kTimeout, "total time budget exhausted");
        } else {
          verdicts.push_back(make_verdict(static_cast<int>(cur), tests[cur], VerdictStatus::kTimeout,
                                          "killed after " + std::to_string(limits.per_test_timeout_ms) +
                                              " ms per-test limit"));
        }
        break;
      case LaunchResult::End::kSignaled:
        verdicts.push_back(make_verdict(static_cast<int>(cur), tests[cur], VerdictStatus::kRuntimeError,
                                        "terminated by signal " + std::to_string(launch.signal) + "\n" +
                                            read_file_excerpt(scratch.path() / "stderr.txt")));
        break;
      case LaunchResult::End::kExited:
        if (launch.exit_code == kHarnessJobUnreadable || launch.exit_code == kHarnessInternalFault) {
          fill_remaining(VerdictStatus::kHarnessError,
                         "harness exited with code " + std::to_string(launch.exit_code) + "\n" +
                             read_file_excerpt(scratch.path() / "stderr.txt"));
        } else {
          // The candidate ended the process itself (os._exit and friends).
          verdicts.push_back(make_verdict(static_cast<int>(cur), tests[cur], VerdictStatus::kRuntimeError,
                                          "process exited with code " + std::to_string(launch.exit_code)));
        }
        break;
      case LaunchResult::End::kMalformed:
        fill_remaining(VerdictStatus::kHarnessError, "malformed harness output: " + launch.detail);
        break;
    }
  }

  SandboxReport report;
  report.verdicts = std::move(verdicts);
  report.pass_rate = pass_rate_of(report.verdicts);
  report.wall_time_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
  report.feedback_text = render_feedback(report);
  return report;
}

std::string render_feedback(const SandboxReport& report) {
  const auto passed = std::count_if(report.verdicts.begin(), report.verdicts.end(),
                                    [](const auto& v) { return v.status == VerdictStatus::kPass; });
  std::ostringstream out;
  out << "PASS RATE: " << passed << "/" << report.verdicts.size() << " (" << report.pass_rate << ")\n";
  if (!report.verdicts.empty() && static_cast<std::size_t>(passed) == report.verdicts.size()) {
    out << "ALL TESTS PASSED\n";
    return out.str();
  }
  int shown = 0;
  for (const auto& v : report.verdicts) {
    if (v.status == VerdictStatus::kPass) continue;
    if (shown == 3) {
      out << "(further failures omitted)\n";
      break;
    }
    ++shown;
    out << "FAILED TEST " << v.test_index << " [" << to_string(v.status) << "]\n";
    out << "  input: " << v.input_args.dump() << "\n";
    out << "  expected: " << v.expected_output.dump() << "\n";
    if (v.actual) out << "  actual: " << v.actual->dump() << "\n";
    if (!v.stderr_excerpt.empty()) out << "  error: " << v.stderr_excerpt << "\n";
  }
  return out.str();
}

}  // namespace rpmcts
