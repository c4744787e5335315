#include "rpmcts/llm.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "rpmcts/embedding.hpp"
#include "rpmcts/error.hpp"
#include "rpmcts/http.hpp"

namespace rpmcts {
namespace fs = std::filesystem;

namespace {

void append_problem(std::ostringstream& out, const Problem& problem) {
  out << "PROBLEM:\n" << problem.statement << "\n\n";
  if (!problem.signature_doc.empty()) out << "SIGNATURE:\n" << problem.signature_doc << "\n\n";
  out << "ENTRY POINT: " << problem.entry_point << "\n\n";
}

void append_steps(std::ostringstream& out, std::string_view title, const std::vector<Step>& steps) {
  out << title << ":\n";
  if (steps.empty()) out << "(none)\n";
  for (const auto& s : steps) out << kStepDelimiter << ' ' << s.text << '\n';
  out << '\n';
}

void append_numbered(std::ostringstream& out, const std::vector<Step>& steps) {
  for (const auto& s : steps) out << s.index << ". " << s.text << '\n';
  out << '\n';
}

bool line_starts_with_delimiter(std::string_view line) {
  auto i = line.find_first_not_of(" \t");
  return i != std::string_view::npos && line.substr(i).starts_with(kStepDelimiter);
}

}  // namespace

std::string_view to_string(CallKind kind) {
  switch (kind) {
    case CallKind::kExpand: return "expand";
    case CallKind::kSimulate: return "simulate";
    case CallKind::kCodegen: return "codegen";
    case CallKind::kEvaluate: return "evaluate";
    case CallKind::kLocalize: return "localize";
    case CallKind::kReflect: return "reflect";
    case CallKind::kDecompose: return "decompose";
  }
  return "expand";
}

CallKind call_kind_from_string(std::string_view s) {
  for (auto k : {CallKind::kExpand, CallKind::kSimulate, CallKind::kCodegen, CallKind::kEvaluate,
                 CallKind::kLocalize, CallKind::kReflect, CallKind::kDecompose}) {
    if (to_string(k) == s) return k;
  }
  throw ParseError("unknown call kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Backends

HttpChatBackend::HttpChatBackend(HttpChatOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) throw ConfigError("chat backend: base URL is empty");
  if (options_.model.empty()) throw ConfigError("chat backend: model is empty");
}

ChatReply HttpChatBackend::complete(const ChatRequest& request) {
  Json body = {{"model", options_.model},
               {"messages", Json::array({{{"role", "user"}, {"content", request.prompt}}})},
               {"temperature", options_.sampling.temperature},
               {"top_p", options_.sampling.top_p},
               {"stream", false}};
  if (options_.sampling.seed) body["seed"] = *options_.sampling.seed;
  std::vector<std::pair<std::string, std::string>> headers;
  if (!options_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + options_.api_key);

  HttpResponse res = http_post_json(options_.base_url, options_.path, body.dump(), headers, options_.timeout);
  if (res.status == 429 || res.status >= 500) {
    throw TransportError("chat backend HTTP " + std::to_string(res.status));
  }
  if (res.status != 200) {
    throw BackendError("chat backend HTTP " + std::to_string(res.status) + ": " + res.body.substr(0, 512));
  }
  try {
    Json j = Json::parse(res.body);
    ChatReply reply;
    const Json& content = j.at("choices").at(0).at("message").at("content");
    reply.text = content.is_null() ? std::string() : content.get<std::string>();
    if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
      if (u->contains("prompt_tokens")) reply.prompt_tokens = u->at("prompt_tokens").get<std::int64_t>();
      if (u->contains("completion_tokens")) {
        reply.completion_tokens = u->at("completion_tokens").get<std::int64_t>();
      }
    }
    return reply;
  } catch (const Json::exception& e) {
    throw BackendError(std::string("malformed chat completion: ") + e.what());
  }
}

std::string request_digest(CallKind kind, std::string_view prompt) {
  std::string canon(to_string(kind));
  canon.push_back('\n');
  canon.append(prompt);
  return hex64(fnv1a64(canon));
}

ScriptedMockBackend::ScriptedMockBackend(std::vector<MockRecord> records)
    : records_(std::move(records)), used_(records_.size(), false) {}

ScriptedMockBackend ScriptedMockBackend::from_json(const Json& script) {
  if (!script.is_array()) throw ParseError("mock script: expected a JSON list");
  std::vector<MockRecord> records;
  for (std::size_t i = 0; i < script.size(); ++i) {
    const Json& r = script[i];
    const std::string where = "mock script record " + std::to_string(i);
    try {
      MockRecord rec;
      rec.kind = call_kind_from_string(r.at("kind").get<std::string>());
      rec.match_digest = r.value("match_digest", std::string("*"));
      if (auto it = r.find("match_contains"); it != r.end() && !it->is_null()) {
        if (it->is_string()) {
          rec.match_contains.push_back(it->get<std::string>());
        } else {
          rec.match_contains = it->get<std::vector<std::string>>();
        }
      }
      rec.response = r.at("response").get<std::string>();
      records.push_back(std::move(rec));
    } catch (const Json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return ScriptedMockBackend(std::move(records));
}

ScriptedMockBackend ScriptedMockBackend::from_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open mock script");
  try {
    return from_json(Json::parse(in));
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

ChatReply ScriptedMockBackend::complete(const ChatRequest& request) {
  std::lock_guard lock(mu_);
  const std::string digest = request_digest(request.kind, request.prompt);
  std::optional<std::size_t> first_unused;
  std::optional<std::size_t> last_match;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const MockRecord& r = records_[i];
    if (r.kind != request.kind) continue;
    if (r.match_digest != "*" && r.match_digest != digest) continue;
    if (!std::all_of(r.match_contains.begin(), r.match_contains.end(),
                     [&](const std::string& c) { return request.prompt.find(c) != std::string::npos; })) {
      continue;
    }
    last_match = i;
    if (!used_[i] && !first_unused) first_unused = i;
  }
  if (!last_match) {
    throw MockScriptError("mock script has no record for " + std::string(to_string(request.kind)) +
                          " request with digest " + digest);
  }
  const std::size_t pick = first_unused.value_or(*last_match);
  used_[pick] = true;
  return ChatReply{records_[pick].response, std::nullopt, std::nullopt};
}

// ---------------------------------------------------------------------------
// Token accounting

std::int64_t estimate_tokens(std::string_view text) {
  std::int64_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

void TokenLedger::record(const TokenUsage& usage) {
  if (usage.prompt_tokens < 0 || usage.completion_tokens < 0) {
    throw std::invalid_argument("token counts must be nonnegative");
  }
  std::lock_guard lock(mu_);
  records_.push_back(usage);
  totals_.prompt_tokens += usage.prompt_tokens;
  totals_.completion_tokens += usage.completion_tokens;
  totals_.calls += 1;
}

std::vector<TokenUsage> TokenLedger::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

TokenTotals TokenLedger::totals() const {
  std::lock_guard lock(mu_);
  return totals_;
}

Json TokenLedger::to_json() const {
  std::lock_guard lock(mu_);
  Json calls = Json::array();
  for (const auto& r : records_) {
    calls.push_back({{"call_kind", to_string(r.kind)},
                     {"prompt_tokens", r.prompt_tokens},
                     {"completion_tokens", r.completion_tokens},
                     {"estimated", r.estimated}});
  }
  return {{"version", 1},
          {"calls", calls},
          {"totals",
           {{"prompt_tokens", totals_.prompt_tokens},
            {"completion_tokens", totals_.completion_tokens},
            {"calls", totals_.calls}}}};
}

// ---------------------------------------------------------------------------
// Reply parsers

std::vector<Step> parse_plan_reply(std::string_view reply) {
  std::size_t pos = 0;
  while (pos < reply.size()) {
    std::size_t eol = reply.find('\n', pos);
    if (eol == std::string_view::npos) eol = reply.size();
    if (line_starts_with_delimiter(reply.substr(pos, eol - pos))) {
      return split_steps(reply.substr(pos));
    }
    pos = eol + 1;
  }
  return split_steps(reply);
}

double parse_score(std::string_view reply) {
  static const std::regex re(R"(SCORE:\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(reply.begin(), reply.end(), m, re)) {
    throw ScoreParseError("no 'SCORE: <number>' in reply: " + std::string(reply.substr(0, 200)));
  }
  return std::clamp(std::stod(m[1].str()), 0.0, 1.0);
}

Localization parse_first_bad_step(std::string_view reply, int step_count) {
  static const std::regex re(R"(FIRST_BAD_STEP:\s*([-+]?\d+))");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(reply.begin(), reply.end(), m, re)) {
    throw LocalizationParseError("no 'FIRST_BAD_STEP: <int>' in reply: " +
                                 std::string(reply.substr(0, 200)));
  }
  long long k = 0;
  try {
    k = std::stoll(m[1].str());
  } catch (const std::out_of_range&) {
    k = m[1].str().starts_with('-') ? 0 : static_cast<long long>(step_count) + 1;
  }
  Localization loc{static_cast<int>(std::clamp<long long>(k, 1, std::max(step_count, 1))), std::nullopt};
  if (k != loc.step_index) {
    loc.warning = "reported step " + m[1].str() + " outside 1.." + std::to_string(step_count) +
                  "; clamped to " + std::to_string(loc.step_index);
  }
  return loc;
}

std::string extract_code(std::string_view reply, std::string_view entry_point) {
  std::string code;
  if (auto open = reply.find("```"); open != std::string_view::npos) {
    auto body = reply.find('\n', open);
    if (body != std::string_view::npos) {
      auto close = reply.find("```", body + 1);
      code = std::string(reply.substr(body + 1, close == std::string_view::npos ? std::string_view::npos
                                                                                  : close - body - 1));
    }
  } else {
    code = std::string(reply);
  }
  // Drop blank leading lines and trailing whitespace; indentation stays.
  const auto first = code.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) {
    code.clear();
  } else {
    const auto line_start = code.rfind('\n', first);
    const auto last = code.find_last_not_of(" \t\r\n");
    const auto begin = line_start == std::string::npos ? 0 : line_start + 1;
    code = code.substr(begin, last - begin + 1);
  }
  const std::regex def_re("(^|\\n)[ \\t]*def[ \\t]+" + std::string(entry_point) + "[ \\t]*\\(");
  if (code.empty() || !std::regex_search(code, def_re)) {
    throw NoCodeBlockError("reply defines no function '" + std::string(entry_point) + "'");
  }
  code.push_back('\n');
  return code;
}

std::vector<std::string> split_code_blocks(std::string_view code) {
  static const std::regex marker(R"(^[ \t]*#[ \t]*STEP[ \t]+\d+)");
  std::vector<std::string> blocks;
  std::string preamble;
  std::size_t pos = 0;
  while (pos < code.size()) {
    std::size_t eol = code.find('\n', pos);
    if (eol == std::string_view::npos) eol = code.size();
    std::string line(code.substr(pos, eol - pos));
    if (std::regex_search(line, marker)) {
      blocks.emplace_back(blocks.empty() ? preamble : std::string());
    }
    std::string& target = blocks.empty() ? preamble : blocks.back();
    target += line;
    target += '\n';
    pos = eol + 1;
  }
  if (blocks.empty()) blocks.push_back(preamble);
  return blocks;
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(ChatBackend& generator, ChatBackend* evaluator, RetryPolicy retry)
    : generator_(generator), evaluator_(evaluator ? *evaluator : generator), retry_(retry) {}

std::string Gateway::call(CallKind kind, std::string prompt) {
  ChatBackend& backend = kind == CallKind::kEvaluate ? evaluator_ : generator_;
  ChatRequest request{kind, std::move(prompt)};
  ChatReply reply;
  for (int attempt = 1;; ++attempt) {
    try {
      reply = backend.complete(request);
      break;
    } catch (const TransportError& e) {
      if (attempt >= retry_.attempts) {
        throw BackendError(std::string(to_string(kind)) + " call failed after " +
                           std::to_string(attempt) + " attempts: " + e.what());
      }
      std::this_thread::sleep_for(retry_.base_delay * (1 << (attempt - 1)));
    }
  }
  TokenUsage usage{kind, 0, 0, false};
  if (reply.prompt_tokens && reply.completion_tokens) {
    usage.prompt_tokens = *reply.prompt_tokens;
    usage.completion_tokens = *reply.completion_tokens;
  } else {
    usage.prompt_tokens = reply.prompt_tokens.value_or(estimate_tokens(request.prompt));
    usage.completion_tokens = reply.completion_tokens.value_or(estimate_tokens(reply.text));
    usage.estimated = true;
  }
  ledger_.record(usage);
  {
    std::lock_guard lock(transcript_mu_);
    transcript_.push_back(TranscriptEntry{static_cast<int>(transcript_.size()) + 1, kind,
                                          request_digest(kind, request.prompt), request.prompt, reply.text});
  }
  return reply.text;
}

Step Gateway::propose_next_step(const Problem& problem, const std::vector<Step>& path_steps,
                                const std::vector<Step>& prior_siblings, const Reflection* reflection) {
  std::ostringstream p;
  p << "You are planning a solution to a programming problem one algorithmic step at a time.\n\n";
  append_problem(p, problem);
  append_steps(p, "STEPS SO FAR", path_steps);
  if (!prior_siblings.empty()) {
    append_steps(p, "CANDIDATE NEXT STEPS ALREADY PROPOSED (propose a different one)", prior_siblings);
  }
  if (reflection && !reflection->text.empty()) {
    p << "REFLECTION ON A FAILED ATTEMPT:\n" << reflection->text << "\n\n";
  }
  p << "Propose the single next algorithmic step. Reply with one line: STEP: <step>\n";
  const std::string reply = call(CallKind::kExpand, p.str());
  std::vector<Step> steps;
  try {
    steps = parse_plan_reply(reply);
  } catch (const EmptyPlanError&) {
    throw EmptyCompletionError("expand: empty step proposal");
  }
  return make_step(static_cast<int>(path_steps.size()) + 1, steps.front().text);
}

std::vector<Step> Gateway::complete_simulation(const Problem& problem, const std::vector<Step>& path_steps) {
  if (path_steps.empty()) throw std::logic_error("complete_simulation: empty path");
  std::ostringstream p;
  p << "Complete the algorithmic plan for this programming problem.\n\n";
  append_problem(p, problem);
  append_steps(p, "FIXED STEPS", path_steps);
  p << "Repeat the fixed steps verbatim, then continue with every remaining step until the plan is "
       "complete. Write each step on its own line as STEP: <step>\n";
  const std::string reply = call(CallKind::kSimulate, p.str());
  std::vector<Step> plan = parse_plan_reply(reply);
  if (plan.size() < path_steps.size()) {
    throw PrefixViolationError("simulation returned " + std::to_string(plan.size()) +
                               " steps for a fixed path of " + std::to_string(path_steps.size()));
  }
  for (std::size_t i = 0; i < path_steps.size(); ++i) {
    if (normalize_whitespace(plan[i].text) != normalize_whitespace(path_steps[i].text)) {
      throw PrefixViolationError("simulation rewrote step " + std::to_string(i + 1) + ": '" +
                                 plan[i].text + "' != '" + path_steps[i].text + "'");
    }
    plan[i].text = path_steps[i].text;
  }
  return plan;
}

std::string Gateway::generate_code(const Problem& problem, const std::vector<Step>& full_steps) {
  if (full_steps.empty()) throw std::logic_error("generate_code: no steps");
  std::ostringstream p;
  p << "Write a Python solution that follows the algorithmic steps exactly.\n\n";
  append_problem(p, problem);
  p << "STEPS:\n";
  append_numbered(p, full_steps);
  p << "Define the function `" << problem.entry_point << "`. Immediately before the code implementing "
    << "step k, put a comment line `# STEP k`. Return only the code in one ```python block.\n";
  return extract_code(call(CallKind::kCodegen, p.str()), problem.entry_point);
}

std::string Gateway::generate_direct(const Problem& problem) {
  std::ostringstream p;
  p << "Write a Python solution to this programming problem.\n\n";
  append_problem(p, problem);
  p << "Define the function `" << problem.entry_point << "`. Return only the code in one ```python block.\n";
  return extract_code(call(CallKind::kCodegen, p.str()), problem.entry_point);
}

double Gateway::evaluate_solution(const Problem& problem, const std::vector<Step>& full_steps,
                                  std::string_view code, const SandboxReport& feedback) {
  std::ostringstream p;
  p << "Assess whether this plan and code solve the problem, including edge cases and performance "
       "on unseen inputs.\n\n";
  append_problem(p, problem);
  p << "STEPS:\n";
  append_numbered(p, full_steps);
  p << "CODE:\n```python\n" << code << "```\n\n";
  p << "SANDBOX FEEDBACK ON PUBLIC TESTS:\n" << feedback.feedback_text << "\n";
  p << "Reply with a line SCORE: <number between 0 and 1>\n";
  return parse_score(call(CallKind::kEvaluate, p.str()));
}

Localization Gateway::localize_error(const Problem& problem, const std::vector<Step>& full_steps,
                                     const std::vector<std::string>& code_blocks,
                                     const ExecutionVerdict& failing_test, std::string_view trace) {
  std::ostringstream p;
  p << "The code below was written block by block from the numbered steps and fails a public test. "
       "Debug the blocks in order and find the first step whose logic is wrong.\n\n";
  append_problem(p, problem);
  for (std::size_t i = 0; i < full_steps.size(); ++i) {
    p << "STEP " << full_steps[i].index << ": " << full_steps[i].text << "\n";
    if (i < code_blocks.size()) p << "```python\n" << code_blocks[i] << "```\n";
  }
  for (std::size_t i = full_steps.size(); i < code_blocks.size(); ++i) {
    p << "UNMATCHED BLOCK:\n```python\n" << code_blocks[i] << "```\n";
  }
  p << "\nFAILING TEST INPUT: " << failing_test.input_args.dump() << "\n";
  p << "EXPECTED: " << failing_test.expected_output.dump() << "\n";
  if (failing_test.actual) p << "ACTUAL: " << failing_test.actual->dump() << "\n";
  p << "TRACE:\n" << trace << "\n";
  p << "Reply with a line FIRST_BAD_STEP: <step number>\n";
  return parse_first_bad_step(call(CallKind::kLocalize, p.str()), static_cast<int>(full_steps.size()));
}

Reflection Gateway::reflect(const Problem& problem, const std::vector<Step>& full_steps,
                            const SandboxReport& feedback) {
  if (feedback.all_passed()) throw std::logic_error("reflect: all public tests passed");
  std::ostringstream p;
  p << "This plan produced code that fails public tests. Explain what is wrong with the plan and "
       "what a better next step must do differently.\n\n";
  append_problem(p, problem);
  append_steps(p, "PLAN", full_steps);
  p << "SANDBOX FEEDBACK:\n" << feedback.feedback_text << "\n";
  std::string text = call(CallKind::kReflect, p.str());
  text = normalize_whitespace(text);
  if (text.empty()) throw EmptyCompletionError("reflect: empty reflection");
  return Reflection{std::move(text), -1};
}

std::vector<Step> Gateway::decompose_solution(std::string_view statement, std::string_view solution_code) {
  if (solution_code.empty()) throw std::logic_error("decompose_solution: empty solution");
  std::ostringstream p;
  p << "Describe the algorithm of this correct solution as an ordered list of algorithmic steps.\n\n";
  p << "PROBLEM:\n" << statement << "\n\nSOLUTION:\n```python\n" << solution_code << "\n```\n\n";
  p << "Write each step on its own line as STEP: <step>\n";
  return parse_plan_reply(call(CallKind::kDecompose, p.str()));
}

std::vector<TranscriptEntry> Gateway::transcript() const {
  std::lock_guard lock(transcript_mu_);
  return transcript_;
}

void Gateway::write_transcript(const fs::path& dir) const {
  fs::create_directories(dir);
  for (const auto& e : transcript()) {
    char name[64];
    std::snprintf(name, sizeof name, "%04d_%s.txt", e.seq, std::string(to_string(e.kind)).c_str());
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    out << "KIND: " << to_string(e.kind) << "\nDIGEST: " << e.digest << "\n----- PROMPT -----\n"
        << e.prompt << "\n----- REPLY -----\n" << e.reply << "\n";
  }
}

}  // namespace rpmcts
