#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rpmcts/problem.hpp"
#include "rpmcts/sandbox.hpp"

namespace rpmcts {

enum class CallKind { kExpand, kSimulate, kCodegen, kEvaluate, kLocalize, kReflect, kDecompose };

std::string_view to_string(CallKind kind);
CallKind call_kind_from_string(std::string_view s);

struct ChatRequest {
  CallKind kind = CallKind::kExpand;
  std::string prompt;
};

struct ChatReply {
  std::string text;
  // Provider-reported counts; absent when the backend does not report them.
  std::optional<std::int64_t> prompt_tokens;
  std::optional<std::int64_t> completion_tokens;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Throws TransportError for retryable transport faults, BackendError
  // otherwise.
  virtual ChatReply complete(const ChatRequest& request) = 0;
  virtual std::string model_name() const = 0;
};

struct SamplingParams {
  double temperature = 0.7;
  double top_p = 0.95;
  std::optional<std::int64_t> seed;
};

struct HttpChatOptions {
  std::string base_url;  // e.g. https://api.example.com
  std::string path = "/v1/chat/completions";
  std::string api_key;
  std::string model;
  SamplingParams sampling;
  std::chrono::milliseconds timeout{120000};
};

// OpenAI-style chat-completions client.
class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpChatOptions options);
  ChatReply complete(const ChatRequest& request) override;
  std::string model_name() const override { return options_.model; }

 private:
  HttpChatOptions options_;
};

// Canonical request digest used to key mock replies: FNV-1a over
// "<kind>\n<prompt>", hex encoded.
std::string request_digest(CallKind kind, std::string_view prompt);

struct MockRecord {
  CallKind kind = CallKind::kExpand;
  // A request digest, or "*" for any request of this kind.
  std::string match_digest = "*";
  // Optional extra filter: the prompt must contain every one of these
  // strings. In JSON either a string or a list of strings.
  std::vector<std::string> match_contains;
  std::string response;
};

// Replays scripted replies. A request is served by the first unused record
// that matches it; once all matching records are used the last one
// repeats. A request no record matches is an error.
class ScriptedMockBackend final : public ChatBackend {
 public:
  explicit ScriptedMockBackend(std::vector<MockRecord> records);
  ScriptedMockBackend(ScriptedMockBackend&& other) noexcept
      : records_(std::move(other.records_)), used_(std::move(other.used_)) {}
  static ScriptedMockBackend from_json(const Json& script);
  static ScriptedMockBackend from_file(const std::filesystem::path& path);

  ChatReply complete(const ChatRequest& request) override;
  std::string model_name() const override { return "scripted-mock"; }

 private:
  std::vector<MockRecord> records_;
  std::vector<bool> used_;
  std::mutex mu_;
};

struct TokenUsage {
  CallKind kind = CallKind::kExpand;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  bool estimated = false;
};

struct TokenTotals {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t calls = 0;

  std::int64_t total() const { return prompt_tokens + completion_tokens; }
  TokenTotals operator-(const TokenTotals& o) const {
    return {prompt_tokens - o.prompt_tokens, completion_tokens - o.completion_tokens, calls - o.calls};
  }
  friend bool operator==(const TokenTotals&, const TokenTotals&) = default;
};

class TokenLedger {
 public:
  void record(const TokenUsage& usage);
  std::vector<TokenUsage> records() const;
  TokenTotals totals() const;
  Json to_json() const;

 private:
  mutable std::mutex mu_;
  std::vector<TokenUsage> records_;
  TokenTotals totals_;
};

// Whitespace-delimited token estimate used when a provider reports none.
std::int64_t estimate_tokens(std::string_view text);

struct TranscriptEntry {
  int seq = 0;
  CallKind kind = CallKind::kExpand;
  std::string digest;
  std::string prompt;
  std::string reply;
};

// Model-written analysis of a failed simulation; fed to later expansions.
struct Reflection {
  std::string text;
  int source_node = -1;
};

struct Localization {
  int step_index = 1;
  std::optional<std::string> warning;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{200};
};

// Reply parsers. They never retry and never guess.
std::vector<Step> parse_plan_reply(std::string_view reply);
double parse_score(std::string_view reply);                  // "SCORE: <x>", clamped to [0,1]
Localization parse_first_bad_step(std::string_view reply, int step_count);  // "FIRST_BAD_STEP: <k>"
std::string extract_code(std::string_view reply, std::string_view entry_point);
// Splits code on "# STEP k" marker lines. Block k holds the lines after
// marker k; code before the first marker joins block 1.
std::vector<std::string> split_code_blocks(std::string_view code);

// The single boundary to the language model. Every call appends exactly one
// TokenUsage record and one transcript entry.
class Gateway {
 public:
  explicit Gateway(ChatBackend& generator, ChatBackend* evaluator = nullptr, RetryPolicy retry = {});

  Step propose_next_step(const Problem& problem, const std::vector<Step>& path_steps,
                         const std::vector<Step>& prior_siblings, const Reflection* reflection);
  // Returns path_steps followed by the completed remainder. Throws
  // PrefixViolationError when the reply rewrites the path.
  std::vector<Step> complete_simulation(const Problem& problem, const std::vector<Step>& path_steps);
  std::string generate_code(const Problem& problem, const std::vector<Step>& full_steps);
  // Baseline: code straight from the problem, no plan.
  std::string generate_direct(const Problem& problem);
  double evaluate_solution(const Problem& problem, const std::vector<Step>& full_steps,
                           std::string_view code, const SandboxReport& feedback);
  Localization localize_error(const Problem& problem, const std::vector<Step>& full_steps,
                              const std::vector<std::string>& code_blocks,
                              const ExecutionVerdict& failing_test, std::string_view trace);
  // Precondition: the report has at least one failure (throws std::logic_error).
  Reflection reflect(const Problem& problem, const std::vector<Step>& full_steps,
                     const SandboxReport& feedback);
  std::vector<Step> decompose_solution(std::string_view statement, std::string_view solution_code);

  const TokenLedger& ledger() const { return ledger_; }
  std::vector<TranscriptEntry> transcript() const;
  // One file per call: transcript/<seq>_<kind>.txt
  void write_transcript(const std::filesystem::path& dir) const;

 private:
  std::string call(CallKind kind, std::string prompt);

  ChatBackend& generator_;
  ChatBackend& evaluator_;
  RetryPolicy retry_;
  TokenLedger ledger_;
  mutable std::mutex transcript_mu_;
  std::vector<TranscriptEntry> transcript_;
};

}  // namespace rpmcts
