#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rpmcts {

// Dense embedding. Never all-zero when produced by an Embedder.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t dim() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  bool is_zero() const;

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
};

// dot(a,b) / (|a| |b|), summed left to right, clamped to [-1, 1].
// Throws DimensionMismatch or ZeroVector.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed(std::string_view text) const = 0;
  virtual std::size_t dim() const = 0;
  // Stable identifier persisted with knowledge bases built by this embedder.
  virtual std::string id() const = 0;
};

// Deterministic offline embedder: character trigrams (with start/end
// markers) hashed into `dim` buckets, counted, then L2-normalized.
class TrigramEmbedder final : public Embedder {
 public:
  explicit TrigramEmbedder(std::size_t dim = 256);

  EmbeddingVector embed(std::string_view text) const override;
  std::size_t dim() const override { return dim_; }
  std::string id() const override;

 private:
  std::size_t dim_;
};

struct RemoteEmbedderOptions {
  std::string base_url;  // scheme://host[:port]
  std::string path = "/embed";
  std::string api_key;
  std::size_t dim = 0;  // 0: learn from the first response
  int max_in_flight = 4;
  std::chrono::milliseconds timeout{30000};
};

// POST {"texts":[...]} -> {"vectors":[[...],...]}.
class RemoteEmbedder final : public Embedder {
 public:
  explicit RemoteEmbedder(RemoteEmbedderOptions options);

  EmbeddingVector embed(std::string_view text) const override;
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) const;
  std::size_t dim() const override;
  std::string id() const override;

 private:
  RemoteEmbedderOptions options_;
  mutable std::atomic<std::size_t> learned_dim_;
  mutable std::counting_semaphore<1024> in_flight_;
};

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t value);

}  // namespace rpmcts
