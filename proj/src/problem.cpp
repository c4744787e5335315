#include "rpmcts/problem.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "rpmcts/error.hpp"

namespace rpmcts {
namespace fs = std::filesystem;

namespace {

const Json& require_field(const Json& j, const char* field, std::string_view where) {
  auto it = j.find(field);
  if (it == j.end()) {
    throw ParseError(std::string(where) + ": missing field '" + field + "'");
  }
  return *it;
}

std::string require_string(const Json& j, const char* field, std::string_view where) {
  const Json& v = require_field(j, field, where);
  if (!v.is_string()) {
    throw ParseError(std::string(where) + ": field '" + field + "' must be a string");
  }
  return v.get<std::string>();
}

Comparison comparison_from_json(const Json& j, std::string_view where) {
  if (j.is_null()) return Comparison::Exact();
  if (!j.is_object()) throw ParseError(std::string(where) + ": 'comparison' must be an object");
  const std::string kind = require_string(j, "kind", where);
  if (kind == "exact") return Comparison::Exact();
  if (kind == "float") {
    double tol = kDefaultFloatTolerance;
    if (auto it = j.find("abs_tol"); it != j.end() && !it->is_null()) {
      if (!it->is_number()) throw ParseError(std::string(where) + ": 'abs_tol' must be a number");
      tol = it->get<double>();
    }
    if (!(tol >= 0.0)) throw ValidationError(std::string(where) + ": abs_tol must be >= 0");
    return Comparison::Float(tol);
  }
  throw ParseError(std::string(where) + ": unknown comparison kind '" + kind + "'");
}

std::vector<TestCase> tests_from_json(const Json& j, const char* field) {
  const Json& arr = require_field(j, field, "problem");
  if (!arr.is_array()) throw ParseError(std::string("problem: '") + field + "' must be an array");
  std::vector<TestCase> out;
  out.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    out.push_back(test_case_from_json(arr[i], std::string(field) + "[" + std::to_string(i) + "]"));
  }
  return out;
}

bool starts_with_delimiter(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  return line.substr(i).starts_with(kStepDelimiter);
}

}  // namespace

Json to_json(const TestCase& test) {
  Json cmp;
  if (test.comparison.kind == Comparison::Kind::kExact) {
    cmp = {{"kind", "exact"}};
  } else {
    cmp = {{"kind", "float"}, {"abs_tol", test.comparison.abs_tol}};
  }
  return {{"input_args", test.input_args},
          {"expected_output", test.expected_output},
          {"comparison", cmp}};
}

TestCase test_case_from_json(const Json& j, std::string_view where) {
  if (!j.is_object()) throw ParseError(std::string(where) + ": test case must be an object");
  TestCase t;
  t.input_args = require_field(j, "input_args", where);
  if (!t.input_args.is_array()) {
    throw ParseError(std::string(where) + ": 'input_args' must be an array");
  }
  t.expected_output = require_field(j, "expected_output", where);
  auto it = j.find("comparison");
  t.comparison = it == j.end() ? Comparison::Exact() : comparison_from_json(*it, where);
  return t;
}

Json to_json(const Problem& problem) {
  Json pub = Json::array();
  for (const auto& t : problem.public_tests) pub.push_back(to_json(t));
  Json priv = Json::array();
  for (const auto& t : problem.private_tests) priv.push_back(to_json(t));
  return {{"id", problem.id},
          {"statement", problem.statement},
          {"entry_point", problem.entry_point},
          {"signature_doc", problem.signature_doc},
          {"public_tests", pub},
          {"private_tests", priv},
          {"category_hint", problem.category_hint ? Json(*problem.category_hint) : Json(nullptr)}};
}

bool is_identifier(std::string_view name) {
  if (name.empty()) return false;
  auto head = static_cast<unsigned char>(name.front());
  if (!(std::isalpha(head) || head == '_')) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u == '_';
  });
}

void validate(const Problem& problem) {
  if (problem.id.empty()) throw ValidationError("id: must be nonempty");
  if (!is_identifier(problem.entry_point)) {
    throw ValidationError("entry_point: '" + problem.entry_point + "' is not a valid identifier");
  }
  if (problem.public_tests.empty()) throw ValidationError("public_tests: must be nonempty");
}

Problem problem_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("problem: document must be a JSON object");
  Problem p;
  p.id = require_string(j, "id", "problem");
  p.statement = require_string(j, "statement", "problem");
  p.entry_point = require_string(j, "entry_point", "problem");
  if (auto it = j.find("signature_doc"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError("problem: field 'signature_doc' must be a string");
    p.signature_doc = it->get<std::string>();
  }
  p.public_tests = tests_from_json(j, "public_tests");
  p.private_tests = tests_from_json(j, "private_tests");
  if (auto it = j.find("category_hint"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError("problem: field 'category_hint' must be a string or null");
    p.category_hint = it->get<std::string>();
  }
  validate(p);
  return p;
}

Problem load_problem(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  try {
    return problem_from_json(j);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_problem(const Problem& problem, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(path.string() + ": cannot open for writing");
  out << to_json(problem).dump(2) << '\n';
}

std::vector<Problem> load_dataset(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && name.ends_with(".problem.json")) files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<Problem> problems;
  std::set<std::string> seen;
  for (const auto& f : files) {
    Problem p = load_problem(f);
    if (!seen.insert(p.id).second) {
      throw ValidationError(f.string() + ": id: duplicate id '" + p.id + "'");
    }
    problems.push_back(std::move(p));
  }
  return problems;
}

void promote_private_tests(Problem& problem, std::size_t count) {
  if (!problem.public_tests.empty()) return;
  const std::size_t n = std::min(count, problem.private_tests.size());
  problem.public_tests.assign(problem.private_tests.begin(), problem.private_tests.begin() + n);
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

Step make_step(int index, std::string_view text) {
  std::string norm = normalize_whitespace(text);
  if (norm.empty()) throw EmptyPlanError("step " + std::to_string(index) + ": empty text");
  if (starts_with_delimiter(norm)) {
    throw ValidationError("step " + std::to_string(index) + ": text contains a step delimiter");
  }
  return Step{index, std::move(norm)};
}

std::vector<Step> split_steps(std::string_view plan_text) {
  std::vector<std::string> segments(1);
  std::size_t pos = 0;
  while (pos <= plan_text.size()) {
    std::size_t eol = plan_text.find('\n', pos);
    if (eol == std::string_view::npos) eol = plan_text.size();
    std::string_view line = plan_text.substr(pos, eol - pos);
    if (starts_with_delimiter(line)) {
      std::size_t at = line.find(kStepDelimiter);
      segments.emplace_back(line.substr(at + kStepDelimiter.size()));
    } else {
      segments.back().append(line);
    }
    segments.back().push_back('\n');
    pos = eol + 1;
  }
  std::vector<Step> steps;
  for (const auto& seg : segments) {
    std::string norm = normalize_whitespace(seg);
    // A segment may still begin with a delimiter when one is stacked on the
    // same line ("STEP: STEP: x"); peel those off.
    while (norm.starts_with(kStepDelimiter)) norm = normalize_whitespace(norm.substr(kStepDelimiter.size()));
    if (norm.empty()) continue;
    steps.push_back(Step{static_cast<int>(steps.size()) + 1, std::move(norm)});
  }
  if (steps.empty()) throw EmptyPlanError("plan contains no nonempty step");
  return steps;
}

std::string join_steps(const std::vector<Step>& steps) {
  std::string out;
  for (const auto& s : steps) {
    if (!out.empty()) out.push_back('\n');
    out.append(kStepDelimiter);
    out.push_back(' ');
    out.append(s.text);
  }
  return out;
}

std::string render_prefix(std::string_view statement, const std::vector<Step>& steps) {
  std::string out(statement);
  for (const auto& s : steps) out = append_step(out, s.text);
  return out;
}

std::string append_step(std::string_view state_text, std::string_view step_text) {
  std::string out(state_text);
  out.push_back('\n');
  out.append(kStepDelimiter);
  out.push_back(' ');
  out.append(step_text);
  return out;
}

}  // namespace rpmcts
