#include "rpmcts/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "rpmcts/error.hpp"
#include "rpmcts/http.hpp"

namespace rpmcts {

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

bool EmbeddingVector::is_zero() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch("cosine: dim " + std::to_string(a.dim()) + " vs " +
                            std::to_string(b.dim()));
  }
  auto av = a.values();
  auto bv = b.values();
  double dot = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    aa += av[i] * av[i];
    bb += bv[i] * bv[i];
  }
  if (aa == 0.0 || bb == 0.0) throw ZeroVector("cosine: zero vector");
  const double c = dot / (std::sqrt(aa) * std::sqrt(bb));
  return std::clamp(c, -1.0, 1.0);
}

TrigramEmbedder::TrigramEmbedder(std::size_t dim) : dim_(dim) {
  if (dim_ == 0) throw ConfigError("embedder dim must be positive");
}

std::string TrigramEmbedder::id() const { return "trigram-fnv1a-" + std::to_string(dim_); }

EmbeddingVector TrigramEmbedder::embed(std::string_view text) const {
  if (text.empty()) throw EmbedderUnavailable("embed: empty text");
  // \x02 and \x03 mark the boundaries so one- and two-byte inputs still
  // yield at least one trigram.
  std::string padded;
  padded.reserve(text.size() + 2);
  padded.push_back('\x02');
  padded.append(text);
  padded.push_back('\x03');

  std::vector<double> counts(dim_, 0.0);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    counts[fnv1a64(std::string_view(padded).substr(i, 3)) % dim_] += 1.0;
  }
  double norm = 0.0;
  for (double c : counts) norm += c * c;
  norm = std::sqrt(norm);
  for (double& c : counts) c /= norm;
  return EmbeddingVector(std::move(counts));
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderOptions options)
    : options_(std::move(options)),
      learned_dim_(options_.dim),
      in_flight_(std::clamp(options_.max_in_flight, 1, 1024)) {
  if (options_.base_url.empty()) throw ConfigError("remote embedder: base_url is empty");
}

std::size_t RemoteEmbedder::dim() const { return learned_dim_.load(); }

std::string RemoteEmbedder::id() const { return "remote:" + options_.base_url + options_.path; }

EmbeddingVector RemoteEmbedder::embed(std::string_view text) const {
  if (text.empty()) throw EmbedderUnavailable("embed: empty text");
  return embed_batch({std::string(text)}).front();
}

std::vector<EmbeddingVector> RemoteEmbedder::embed_batch(const std::vector<std::string>& texts) const {
  nlohmann::json req = {{"texts", texts}};
  std::vector<std::pair<std::string, std::string>> headers;
  if (!options_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + options_.api_key);

  HttpResponse res;
  in_flight_.acquire();
  try {
    res = http_post_json(options_.base_url, options_.path, req.dump(), headers, options_.timeout);
  } catch (const TransportError& e) {
    in_flight_.release();
    throw EmbedderUnavailable(e.what());
  }
  in_flight_.release();
  if (res.status != 200) {
    throw EmbedderUnavailable("embedder returned HTTP " + std::to_string(res.status));
  }

  std::vector<EmbeddingVector> out;
  try {
    auto body = nlohmann::json::parse(res.body);
    const auto& vectors = body.at("vectors");
    if (vectors.size() != texts.size()) {
      throw EmbedderUnavailable("embedder returned " + std::to_string(vectors.size()) +
                                " vectors for " + std::to_string(texts.size()) + " texts");
    }
    for (const auto& v : vectors) out.emplace_back(v.get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw EmbedderUnavailable(std::string("malformed embedder reply: ") + e.what());
  }

  for (const auto& v : out) {
    std::size_t expected = learned_dim_.load();
    if (expected == 0) {
      learned_dim_.compare_exchange_strong(expected, v.dim());
      expected = learned_dim_.load();
    }
    if (v.dim() != expected) {
      throw DimensionMismatch("embedder returned dim " + std::to_string(v.dim()) + ", expected " +
                              std::to_string(expected));
    }
    if (v.dim() == 0 || v.is_zero()) throw ZeroVector("embedder returned a zero vector");
  }
  return out;
}

}  // namespace rpmcts
