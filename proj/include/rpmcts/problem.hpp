#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rpmcts {

using Json = nlohmann::json;

inline constexpr double kDefaultFloatTolerance = 1e-6;

// How a candidate's return value is checked against the expected one.
struct Comparison {
  enum class Kind { kExact, kFloat };
  Kind kind = Kind::kExact;
  double abs_tol = kDefaultFloatTolerance;

  static Comparison Exact() { return {}; }
  static Comparison Float(double tol = kDefaultFloatTolerance) {
    return {Kind::kFloat, tol};
  }
  friend bool operator==(const Comparison&, const Comparison&) = default;
};

struct TestCase {
  Json input_args = Json::array();
  Json expected_output;
  Comparison comparison;

  friend bool operator==(const TestCase&, const TestCase&) = default;
};

struct Problem {
  std::string id;
  std::string statement;
  std::string entry_point;
  std::string signature_doc;
  std::vector<TestCase> public_tests;
  std::vector<TestCase> private_tests;
  std::optional<std::string> category_hint;

  friend bool operator==(const Problem&, const Problem&) = default;
};

// One algorithmic step of a plan. Indices are 1-based and consecutive.
struct Step {
  int index = 1;
  std::string text;

  friend bool operator==(const Step&, const Step&) = default;
};

// Line prefix that starts a new step in plan text.
inline constexpr std::string_view kStepDelimiter = "STEP:";

Json to_json(const TestCase& test);
TestCase test_case_from_json(const Json& j, std::string_view where);
Json to_json(const Problem& problem);

// Validates every Problem invariant; throws ValidationError naming the field.
void validate(const Problem& problem);
Problem problem_from_json(const Json& j);

Problem load_problem(const std::filesystem::path& path);
void save_problem(const Problem& problem, const std::filesystem::path& path);

// Loads every `*.problem.json` in `dir`, sorted by file name. Ids must be
// unique across the directory.
std::vector<Problem> load_dataset(const std::filesystem::path& dir);

// Promotes the first `count` private tests to public ones when a source
// dataset ships without public cases.
void promote_private_tests(Problem& problem, std::size_t count = 2);

bool is_identifier(std::string_view name);

// Collapses whitespace runs to single spaces and trims both ends.
std::string normalize_whitespace(std::string_view text);

// Splits plan text on lines starting with `STEP:`. Segments are trimmed and
// whitespace-normalized; empty ones are dropped. Throws EmptyPlanError when
// nothing remains.
std::vector<Step> split_steps(std::string_view plan_text);
std::string join_steps(const std::vector<Step>& steps);

// Builds a Step, rejecting empty text or text carrying a step boundary.
Step make_step(int index, std::string_view text);

// Text of a state: the problem statement followed by each step as a
// delimited line. Knowledge-base prefixes and retrieval queries share it.
std::string render_prefix(std::string_view statement,
                          const std::vector<Step>& steps);
std::string append_step(std::string_view state_text, std::string_view step_text);

}  // namespace rpmcts
