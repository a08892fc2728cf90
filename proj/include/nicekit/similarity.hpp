#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nicekit/corpus.hpp"
#include "nicekit/error.hpp"
#include "nicekit/hash.hpp"
#include "nicekit/http.hpp"

namespace nicekit {

/// Cosine similarity u.v / (|u||v|).
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw Error(ErrorCode::kDimensionMismatch,
                "cosine of vectors of length " + std::to_string(u.size()) + " and " +
                    std::to_string(v.size()));
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw Error(ErrorCode::kZeroVector, "cosine of an all-zero vector");
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

inline std::string text_hash(std::string_view text) { return sha256_hex(text); }

// ---------------------------------------------------------------------------
// Embedding providers

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dimension() const = 0;
  /// One vector per text, in input order.
  virtual std::vector<Vector> embed(const std::vector<std::string>& texts) = 0;
};

/// Vectors looked up by text hash from a newline-delimited
/// {"text_hash", "vector"} file.
class SidecarEmbedder final : public Embedder {
 public:
  explicit SidecarEmbedder(const std::filesystem::path& path) {
    detail::for_each_record(path, [&](std::size_t row, const Json& obj) {
      std::string h = detail::require_string(obj, "text_hash", row);
      auto v = detail::optional_vector(obj, "vector", row);
      if (!v) throw Error(ErrorCode::kMissingField, "row " + std::to_string(row) + ": 'vector'");
      if (dimension_ == 0) dimension_ = v->size();
      if (v->size() != dimension_)
        throw Error(ErrorCode::kDimensionMismatch,
                    "row " + std::to_string(row) + ": got " + std::to_string(v->size()) +
                        ", want " + std::to_string(dimension_));
      vectors_[std::move(h)] = std::move(*v);
    });
  }

  std::size_t dimension() const override { return dimension_; }

  std::vector<Vector> embed(const std::vector<std::string>& texts) override {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
      auto it = vectors_.find(text_hash(t));
      if (it == vectors_.end())
        throw Error(ErrorCode::kMissingEmbedding, "no sidecar vector for text '" + t + "'");
      out.push_back(it->second);
    }
    return out;
  }

 private:
  std::unordered_map<std::string, Vector> vectors_;
  std::size_t dimension_ = 0;
};

inline void write_sidecar(const std::filesystem::path& path, const std::vector<std::string>& texts,
                          const std::vector<Vector>& vectors) {
  std::vector<Json> records;
  for (std::size_t i = 0; i < texts.size(); ++i)
    records.push_back({{"text_hash", text_hash(texts[i])}, {"vector", vectors.at(i)}});
  detail::write_lines(path, records);
}

struct RemoteEmbedderConfig {
  std::string url;  // full endpoint URL
  std::string token_env = "NICEKIT_API_KEY";
  std::size_t dimension = 0;
  std::size_t batch_size = 64;
  std::chrono::milliseconds timeout{30000};
  RetryPolicy retry;
};

/// Remote embedding endpoint ({"input": [...]} -> {"data": [{"embedding"}]})
/// with an in-memory cache keyed by text hash.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(RemoteEmbedderConfig cfg, std::shared_ptr<HttpTransport> transport,
                 Sleeper sleeper = default_sleeper())
      : cfg_(std::move(cfg)), transport_(std::move(transport)), sleep_(std::move(sleeper)) {}

  std::size_t dimension() const override { return cfg_.dimension; }

  std::vector<Vector> embed(const std::vector<std::string>& texts) override {
    std::vector<std::string> missing;
    {
      std::shared_lock lock(mutex_);
      std::unordered_map<std::string, bool> queued;
      for (const auto& t : texts) {
        auto h = text_hash(t);
        if (!cache_.contains(h) && !queued[h]) {
          queued[h] = true;
          missing.push_back(t);
        }
      }
    }
    for (std::size_t start = 0; start < missing.size(); start += cfg_.batch_size) {
      std::vector<std::string> batch(
          missing.begin() + start,
          missing.begin() + std::min(missing.size(), start + cfg_.batch_size));
      auto vectors = fetch(batch);
      std::unique_lock lock(mutex_);
      for (std::size_t i = 0; i < batch.size(); ++i)
        cache_.emplace(text_hash(batch[i]), std::move(vectors[i]));
    }
    std::shared_lock lock(mutex_);
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(cache_.at(text_hash(t)));
    return out;
  }

  std::size_t cached() const {
    std::shared_lock lock(mutex_);
    return cache_.size();
  }

 private:
  std::vector<Vector> fetch(const std::vector<std::string>& batch) {
    Json body = {{"input", batch}};
    HttpResponse res = post_with_retry(*transport_, cfg_.url, body.dump(),
                                       bearer_headers(cfg_.token_env), cfg_.timeout, cfg_.retry,
                                       sleep_);
    std::vector<Vector> out;
    try {
      Json j = Json::parse(res.body);
      const auto& data = j.at("data");
      if (!data.is_array() || data.size() != batch.size())
        throw Error(ErrorCode::kMalformedResponse, "embedding count does not match input count");
      for (const auto& item : data) {
        auto v = item.at("embedding").get<Vector>();
        if (cfg_.dimension == 0) cfg_.dimension = v.size();
        if (v.size() != cfg_.dimension)
          throw Error(ErrorCode::kDimensionMismatch,
                      "endpoint returned " + std::to_string(v.size()) + " components, want " +
                          std::to_string(cfg_.dimension));
        out.push_back(std::move(v));
      }
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kMalformedResponse, cfg_.url + ": " + e.what());
    }
    return out;
  }

  RemoteEmbedderConfig cfg_;
  std::shared_ptr<HttpTransport> transport_;
  Sleeper sleep_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, Vector> cache_;
};

/// Fills in missing embeddings from the provider; vectors already present
/// inline are kept.
inline CandidatePool resolve_embeddings(const CandidatePool& pool, Embedder& embedder) {
  std::vector<Example> examples = pool.examples();
  std::vector<std::string> texts;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (!examples[i].embedding) {
      texts.push_back(examples[i].input_text);
      slots.push_back(i);
    }
  if (!texts.empty()) {
    auto vectors = embedder.embed(texts);
    for (std::size_t i = 0; i < slots.size(); ++i) examples[slots[i]].embedding = std::move(vectors[i]);
  }
  return CandidatePool(std::move(examples), pool.dimension());
}

inline QuerySet resolve_embeddings(const QuerySet& qs, Embedder& embedder) {
  QuerySet out = qs;
  std::vector<std::string> texts;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < out.queries.size(); ++i)
    if (!out.queries[i].embedding) {
      texts.push_back(out.queries[i].input_text);
      slots.push_back(i);
    }
  if (!texts.empty()) {
    auto vectors = embedder.embed(texts);
    for (std::size_t i = 0; i < slots.size(); ++i) out.queries[slots[i]].embedding = std::move(vectors[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ranking and binning

struct ScoredId {
  std::string id;
  double score = 0.0;
  std::size_t index = 0;  // position in the pool
};

/// Orders by descending score, then ascending id.
inline void sort_by_score(std::vector<ScoredId>& items) {
  std::sort(items.begin(), items.end(), [](const ScoredId& a, const ScoredId& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
}

inline const Vector& require_embedding(const std::optional<Vector>& e, const std::string& id) {
  if (!e) throw Error(ErrorCode::kMissingEmbedding, "no embedding for '" + id + "'");
  return *e;
}

inline std::vector<ScoredId> similarity_rank(const CandidatePool& pool, const Query& query) {
  const Vector& q = require_embedding(query.embedding, query.id);
  std::vector<ScoredId> ranked;
  ranked.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Example& ex = pool[i];
    ranked.push_back({ex.id, cosine(require_embedding(ex.embedding, ex.id), q), i});
  }
  sort_by_score(ranked);
  return ranked;
}

struct BinPartition {
  std::string query_id;
  std::vector<std::vector<std::string>> bins;  // bins[0] = most similar slice
  std::map<std::string, double> similarity;

  std::size_t num_bins() const { return bins.size(); }
};

/// Sizes of a rank-percentile split: the first n mod b bins get one extra.
inline std::vector<std::size_t> bin_sizes(std::size_t n, std::size_t num_bins) {
  std::vector<std::size_t> sizes(num_bins, n / num_bins);
  for (std::size_t j = 0; j < n % num_bins; ++j) ++sizes[j];
  return sizes;
}

inline BinPartition partition_ranked(const std::string& query_id,
                                     const std::vector<ScoredId>& ranked, std::size_t num_bins) {
  if (num_bins < 2) throw Error(ErrorCode::kInvalidValue, "num_bins must be >= 2");
  if (ranked.size() < num_bins)
    throw Error(ErrorCode::kPoolTooSmall, "pool of " + std::to_string(ranked.size()) +
                                              " cannot fill " + std::to_string(num_bins) + " bins");
  BinPartition part;
  part.query_id = query_id;
  std::size_t pos = 0;
  for (std::size_t size : bin_sizes(ranked.size(), num_bins)) {
    auto& bin = part.bins.emplace_back();
    for (std::size_t i = 0; i < size; ++i, ++pos) bin.push_back(ranked[pos].id);
  }
  for (const auto& r : ranked) part.similarity[r.id] = r.score;
  return part;
}

inline BinPartition partition_bins(const CandidatePool& pool, const Query& query,
                                   std::size_t num_bins) {
  if (num_bins < 2) throw Error(ErrorCode::kInvalidValue, "num_bins must be >= 2");
  if (pool.size() < num_bins)
    throw Error(ErrorCode::kPoolTooSmall, "pool of " + std::to_string(pool.size()) +
                                              " cannot fill " + std::to_string(num_bins) + " bins");
  return partition_ranked(query.id, similarity_rank(pool, query), num_bins);
}

inline Json to_json(const BinPartition& p) {
  Json sims = Json::object();
  for (const auto& [id, s] : p.similarity) sims[id] = s;
  return {{"query_id", p.query_id}, {"bins", p.bins}, {"similarity", sims}};
}

}  // namespace nicekit
