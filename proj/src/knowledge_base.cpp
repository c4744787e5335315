#include "rpmcts/knowledge_base.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "rpmcts/error.hpp"

namespace rpmcts {
namespace fs = std::filesystem;

namespace {
constexpr int kKbFormatVersion = 1;
}

const std::vector<std::string>& default_categories() {
  static const std::vector<std::string> kCategories = {
      "greedy",   "dp",         "graphs",          "trees",          "math",
      "strings",  "sorting",    "searching",       "two-pointers",   "data-structures",
      "geometry", "bit-manipulation", "simulation", "constructive"};
  return kCategories;
}

KnowledgeBase::KnowledgeBase(std::string embedder_id, std::size_t dim)
    : embedder_id_(std::move(embedder_id)), dim_(dim) {}

std::vector<const KBEntry*> KnowledgeBase::entries() const {
  std::vector<const KBEntry*> out;
  out.reserve(size_);
  for (const auto& [_, shard] : shards_) {
    for (const auto& e : shard) out.push_back(&e);
  }
  return out;
}

void KnowledgeBase::add(KBEntry entry) {
  if (entry.vector.dim() != dim_) {
    throw DimensionMismatch("kb entry " + entry.source_problem_id + "#" +
                            std::to_string(entry.step_index) + ": dim " +
                            std::to_string(entry.vector.dim()) + " != " + std::to_string(dim_));
  }
  shards_[entry.category].push_back(std::move(entry));
  ++size_;
}

KnowledgeBase build_kb(const std::vector<CorpusItem>& corpus, const Embedder& embedder,
                       const std::vector<std::string>& categories) {
  for (const auto& item : corpus) {
    if (item.steps.empty()) throw EmptyStepsError("corpus item '" + item.problem_id + "': no steps");
    if (std::find(categories.begin(), categories.end(), item.category) == categories.end()) {
      throw UnknownCategoryError("corpus item '" + item.problem_id + "': unknown category '" +
                                 item.category + "'");
    }
  }
  KnowledgeBase kb(embedder.id(), embedder.dim());
  for (const auto& item : corpus) {
    std::string prefix = item.statement;
    for (std::size_t j = 0; j < item.steps.size(); ++j) {
      prefix = append_step(prefix, item.steps[j].text);
      kb.add(KBEntry{item.category, prefix, embedder.embed(prefix), item.problem_id,
                     static_cast<int>(j) + 1});
    }
  }
  return kb;
}

double retrieval_score(const KnowledgeBase& kb, const EmbeddingVector& query,
                       const std::optional<std::string>& category_filter) {
  double best = 0.0;
  auto scan = [&](const std::vector<KBEntry>& shard) {
    for (const auto& e : shard) best = std::max(best, cosine(query, e.vector));
  };
  if (category_filter) {
    if (auto it = kb.shards().find(*category_filter); it != kb.shards().end()) scan(it->second);
  } else {
    for (const auto& [_, shard] : kb.shards()) scan(shard);
  }
  return best;
}

double retrieval_score(const KnowledgeBase& kb, const Embedder& embedder,
                       std::string_view state_text, std::string_view action_text,
                       const std::optional<std::string>& category_filter) {
  if (kb.empty()) return 0.0;
  return retrieval_score(kb, embedder.embed(append_step(state_text, action_text)), category_filter);
}

void save_kb(const KnowledgeBase& kb, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw KbIoError(path.string() + ": cannot open for writing");
  Json header = {{"version", kKbFormatVersion},
                 {"dim", kb.dim()},
                 {"embedder_id", kb.embedder_id()},
                 {"count", kb.size()}};
  out << header.dump() << '\n';
  for (const KBEntry* e : kb.entries()) {
    Json line = {{"category", e->category},
                 {"source_problem_id", e->source_problem_id},
                 {"step_index", e->step_index},
                 {"prefix_text", e->prefix_text},
                 {"vector", std::vector<double>(e->vector.values().begin(), e->vector.values().end())}};
    out << line.dump() << '\n';
  }
  if (!out) throw KbIoError(path.string() + ": write failed");
}

KnowledgeBase load_kb(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw KbIoError(path.string() + ": cannot open");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string data = buf.str();

  std::size_t offset = 0;
  auto next_line = [&](std::string& line) -> bool {
    if (offset >= data.size()) return false;
    std::size_t eol = data.find('\n', offset);
    if (eol == std::string::npos) {
      // Every record ends in a newline; a missing one means truncation.
      throw KbIoError(path.string() + ": truncated record at byte offset " + std::to_string(offset));
    }
    line = data.substr(offset, eol - offset);
    offset = eol + 1;
    return true;
  };
  auto parse_at = [&](const std::string& line, std::size_t at) {
    try {
      return Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw KbIoError(path.string() + ": malformed record at byte offset " +
                      std::to_string(at + (e.byte > 0 ? e.byte - 1 : 0)) + ": " + e.what());
    }
  };

  std::string line;
  if (!next_line(line)) throw KbIoError(path.string() + ": empty file (byte offset 0)");
  Json header = parse_at(line, 0);
  if (!header.is_object() || header.value("version", 0) != kKbFormatVersion) {
    throw SchemaVersionError(path.string() + ": unsupported knowledge base version");
  }
  const auto dim = header.at("dim").get<std::size_t>();
  const auto count = header.at("count").get<std::size_t>();
  KnowledgeBase kb(header.at("embedder_id").get<std::string>(), dim);

  while (true) {
    const std::size_t at = offset;
    if (!next_line(line)) break;
    Json j = parse_at(line, at);
    try {
      std::vector<double> v = j.at("vector").get<std::vector<double>>();
      if (v.size() != dim) {
        throw SchemaVersionError(path.string() + ": entry at byte offset " + std::to_string(at) +
                                 " has dim " + std::to_string(v.size()) + ", header says " +
                                 std::to_string(dim));
      }
      kb.add(KBEntry{j.at("category").get<std::string>(), j.at("prefix_text").get<std::string>(),
                     EmbeddingVector(std::move(v)), j.at("source_problem_id").get<std::string>(),
                     j.at("step_index").get<int>()});
    } catch (const Json::exception& e) {
      throw KbIoError(path.string() + ": bad entry at byte offset " + std::to_string(at) + ": " +
                      e.what());
    }
  }
  if (kb.size() != count) {
    throw KbIoError(path.string() + ": truncated at byte offset " + std::to_string(offset) + ": " +
                    std::to_string(kb.size()) + " of " + std::to_string(count) + " entries");
  }
  return kb;
}

}  // namespace rpmcts
