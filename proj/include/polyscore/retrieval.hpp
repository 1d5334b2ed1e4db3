#pragma once

// Cache file layout (little-endian):
//
//   "PSCC" u32 version, u64 model fingerprint, u64 C, u64 hidden
//   f32 embeddings[C * hidden], row-major
//   per row: u64 id, u32 text length, text bytes

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polyscore/checkpoint.hpp"
#include "polyscore/model.hpp"

namespace polyscore {

inline constexpr std::uint32_t kCacheVersion = 1;

struct CandidateCache {
  std::vector<std::uint64_t> ids;
  std::vector<std::string> texts;
  TensorF embeddings;  // row i belongs to ids[i]
  std::uint64_t fingerprint = 0;

  std::size_t size() const { return ids.size(); }
};

std::string serialize_cache(const CandidateCache& cache);
CandidateCache parse_cache(std::string_view bytes);
void save_cache(const std::filesystem::path& path, const CandidateCache& cache);
CandidateCache load_cache(const std::filesystem::path& path);

struct ScoredCandidate {
  std::uint64_t id;
  double score;
  bool operator==(const ScoredCandidate&) const = default;
};

struct RankResult {
  std::vector<ScoredCandidate> ranking;  // top k, best first
  std::optional<std::size_t> rank_of_gold;

  bool operator==(const RankResult&) const = default;
};

// Orders by descending score, ties by ascending id; keeps the first k. The
// gold rank counts against all candidates, not only the kept ones.
RankResult rank_scores(std::span<const std::uint64_t> ids, std::span<const double> scores, std::size_t k,
                       std::optional<std::uint64_t> gold = std::nullopt);

// Vector-level ranking against a cache (no fingerprint check).
RankResult rank_bi(const TensorF& context_embedding, const CandidateCache& cache, std::size_t k,
                   std::optional<std::uint64_t> gold = std::nullopt);
RankResult rank_poly(const TensorF& context_vectors, const CandidateCache& cache, std::size_t k,
                     std::optional<std::uint64_t> gold = std::nullopt);

double recall_at_k(std::span<const RankResult> results, std::size_t k);
double mrr(std::span<const RankResult> results);

/// A model fixed at 32-bit precision plus the fingerprint of the checkpoint it
/// came from, used for every text-level retrieval path.
class Retriever {
 public:
  Retriever(const Model& model, Vocabulary vocab, SequenceLimits limits = {});

  const InferenceModel<float>& model() const { return model_; }
  Architecture arch() const { return model_.head().arch; }
  std::uint64_t fingerprint() const { return fingerprint_; }

  // ids default to row indices.
  CandidateCache build_cache(const std::vector<std::string>& candidates,
                             std::vector<std::uint64_t> ids = {}) const;
  void check_fresh(const CandidateCache& cache) const;

  // Bi / Poly against a cache built by the same model.
  RankResult rank(std::string_view context, const CandidateCache& cache, std::size_t k,
                  std::optional<std::uint64_t> gold = std::nullopt) const;
  // Cross: one forward per (context, candidate).
  RankResult rank_cross(std::string_view context, const std::vector<std::string>& candidates, std::size_t k,
                        std::optional<std::uint64_t> gold = std::nullopt) const;
  // Any architecture, re-encoding every candidate from text.
  RankResult rank_uncached(std::string_view context, const std::vector<std::string>& candidates, std::size_t k,
                           std::optional<std::uint64_t> gold = std::nullopt) const;

 private:
  InferenceModel<float> model_;
  std::uint64_t fingerprint_;
};

}  // namespace polyscore
