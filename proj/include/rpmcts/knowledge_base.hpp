#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rpmcts/embedding.hpp"
#include "rpmcts/problem.hpp"

namespace rpmcts {

// The shipped list of 14 algorithm categories. Configurable per build.
const std::vector<std::string>& default_categories();

// One embedded "statement + steps 1..j" prefix of a solved problem.
struct KBEntry {
  std::string category;
  std::string prefix_text;
  EmbeddingVector vector;
  std::string source_problem_id;
  int step_index = 1;

  friend bool operator==(const KBEntry&, const KBEntry&) = default;
};

// A solved problem fed into the knowledge base.
struct CorpusItem {
  std::string problem_id;
  std::string statement;
  std::vector<Step> steps;
  std::string category;
};

// Prefix knowledge base, sharded by category. Immutable once built or
// loaded; concurrent queries are safe.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  KnowledgeBase(std::string embedder_id, std::size_t dim);

  const std::string& embedder_id() const { return embedder_id_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  const std::map<std::string, std::vector<KBEntry>>& shards() const { return shards_; }
  // Entries in shard order (categories sorted, insertion order within).
  std::vector<const KBEntry*> entries() const;

  // Throws DimensionMismatch when the vector's dim differs from dim().
  void add(KBEntry entry);

  friend bool operator==(const KnowledgeBase&, const KnowledgeBase&) = default;

 private:
  std::string embedder_id_;
  std::size_t dim_ = 0;
  std::size_t size_ = 0;
  std::map<std::string, std::vector<KBEntry>> shards_;
};

// One entry per step prefix of every corpus item. Throws EmptyStepsError or
// UnknownCategoryError naming the problem.
KnowledgeBase build_kb(const std::vector<CorpusItem>& corpus, const Embedder& embedder,
                       const std::vector<std::string>& categories = default_categories());

// max(0, max_k cosine(embed(query), k)) over the filtered entries; 0 when no
// entry matches.
double retrieval_score(const KnowledgeBase& kb, const EmbeddingVector& query,
                       const std::optional<std::string>& category_filter = std::nullopt);
double retrieval_score(const KnowledgeBase& kb, const Embedder& embedder,
                       std::string_view state_text, std::string_view action_text,
                       const std::optional<std::string>& category_filter = std::nullopt);

// Header line {"version","dim","embedder_id","count"} then one JSON line per
// entry. Throws KbIoError (with byte offset on corruption) or
// SchemaVersionError.
void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path);
KnowledgeBase load_kb(const std::filesystem::path& path);

}  // namespace rpmcts
