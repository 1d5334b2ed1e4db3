#include "polyscore/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "polyscore/binio.hpp"
#include "polyscore/kernels.hpp"

namespace polyscore {

std::string serialize_cache(const CandidateCache& c) {
  if (c.ids.size() != c.texts.size() || c.embeddings.rank() != 2 || c.embeddings.rows() != c.ids.size()) {
    throw ContractError("inconsistent candidate cache");
  }
  binio::Writer w;
  w.bytes("PSCC");
  w.u32(kCacheVersion);
  w.u64(c.fingerprint);
  w.u64(c.embeddings.rows());
  w.u64(c.embeddings.cols());
  for (float v : c.embeddings.data()) w.f32(v);
  for (std::size_t i = 0; i < c.ids.size(); ++i) {
    w.u64(c.ids[i]);
    w.str(c.texts[i]);
  }
  return w.take();
}

CandidateCache parse_cache(std::string_view bytes) {
  binio::Reader r(bytes, "cache");
  if (r.bytes(4) != "PSCC") r.fail("not a candidate cache (bad magic)");
  if (const auto v = r.u32(); v != kCacheVersion) r.fail("unsupported cache version " + std::to_string(v));
  CandidateCache c;
  c.fingerprint = r.u64();
  const std::uint64_t n = r.u64();
  const std::uint64_t h = r.u64();
  if (n == 0 || h == 0) r.fail("empty cache");
  if (n > bytes.size() || h > bytes.size() || n * h * 4 > bytes.size()) r.fail("truncated");
  std::vector<float> data(n * h);
  for (float& v : data) v = r.f32();
  c.embeddings = TensorF({n, h}, std::move(data));
  for (std::uint64_t i = 0; i < n; ++i) {
    c.ids.push_back(r.u64());
    c.texts.push_back(r.str());
  }
  if (!r.done()) r.fail("trailing bytes");
  return c;
}

void save_cache(const std::filesystem::path& path, const CandidateCache& cache) {
  binio::write_file(path, serialize_cache(cache));
}

CandidateCache load_cache(const std::filesystem::path& path) { return parse_cache(binio::read_file(path)); }

RankResult rank_scores(std::span<const std::uint64_t> ids, std::span<const double> scores, std::size_t k,
                       std::optional<std::uint64_t> gold) {
  if (ids.size() != scores.size()) throw DimensionError("ids and scores differ in length");
  if (ids.empty()) throw ContractError("nothing to rank");
  if (k == 0 || k > ids.size()) {
    throw ContractError("k = " + std::to_string(k) + " outside [1, " + std::to_string(ids.size()) + "]");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw NumericError("NaN score");
  }
  auto before = [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : ids[a] < ids[b];
  };
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);

  RankResult res;
  res.ranking.reserve(k);
  for (std::size_t i = 0; i < k; ++i) res.ranking.push_back({ids[order[i]], scores[order[i]]});
  if (gold) {
    auto it = std::find(ids.begin(), ids.end(), *gold);
    if (it == ids.end()) throw ContractError("gold id " + std::to_string(*gold) + " is not a candidate");
    const std::size_t g = static_cast<std::size_t>(it - ids.begin());
    std::size_t ahead = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) ahead += before(i, g) ? 1 : 0;
    res.rank_of_gold = ahead + 1;
  }
  return res;
}

namespace {

void check_width(const TensorF& ctx, const CandidateCache& cache) {
  if (ctx.rank() != 2 || ctx.cols() != cache.embeddings.cols()) {
    throw DimensionError("context " + shape_str(ctx.shape()) + " vs cache " + shape_str(cache.embeddings.shape()));
  }
}

}  // namespace

RankResult rank_bi(const TensorF& context_embedding, const CandidateCache& cache, std::size_t k,
                   std::optional<std::uint64_t> gold) {
  check_width(context_embedding, cache);
  if (context_embedding.rows() != 1) throw DimensionError("bi context must be a single row");
  const auto scores = kernels::row_scores(cache.embeddings, context_embedding.row(0));
  return rank_scores(cache.ids, scores, k, gold);
}

RankResult rank_poly(const TensorF& context_vectors, const CandidateCache& cache, std::size_t k,
                     std::optional<std::uint64_t> gold) {
  check_width(context_vectors, cache);
  const auto scores = kernels::poly_scores(cache.embeddings, context_vectors);
  return rank_scores(cache.ids, scores, k, gold);
}

double recall_at_k(std::span<const RankResult> results, std::size_t k) {
  if (results.empty()) throw ContractError("no results");
  if (k == 0) throw ContractError("k must be >= 1");
  std::size_t hits = 0;
  for (const auto& r : results) {
    if (!r.rank_of_gold) throw ContractError("result without a gold rank");
    hits += *r.rank_of_gold <= k ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double mrr(std::span<const RankResult> results) {
  if (results.empty()) throw ContractError("no results");
  double acc = 0;
  for (const auto& r : results) {
    if (!r.rank_of_gold) throw ContractError("result without a gold rank");
    acc += 1.0 / static_cast<double>(*r.rank_of_gold);
  }
  return acc / static_cast<double>(results.size());
}

Retriever::Retriever(const Model& model, Vocabulary vocab, SequenceLimits limits)
    : model_(model, std::move(vocab), limits), fingerprint_(model_fingerprint(model)) {}

CandidateCache Retriever::build_cache(const std::vector<std::string>& candidates, std::vector<std::uint64_t> ids) const {
  if (candidates.empty()) throw ContractError("cannot build a cache from an empty candidate list");
  if (ids.empty()) {
    ids.resize(candidates.size());
    std::iota(ids.begin(), ids.end(), std::uint64_t{0});
  }
  if (ids.size() != candidates.size()) throw DimensionError("ids and candidates differ in length");
  CandidateCache c;
  c.ids = std::move(ids);
  c.texts = candidates;
  c.embeddings = model_.embed_candidates(candidates);
  c.fingerprint = fingerprint_;
  return c;
}

void Retriever::check_fresh(const CandidateCache& cache) const {
  if (cache.fingerprint != fingerprint_) {
    throw StaleArtifactError("candidate cache was built by model " + binio::hex64(cache.fingerprint) +
                             " but the scoring model is " + binio::hex64(fingerprint_) + "; rebuild the index");
  }
}

RankResult Retriever::rank(std::string_view context, const CandidateCache& cache, std::size_t k,
                           std::optional<std::uint64_t> gold) const {
  check_fresh(cache);
  const TensorF ctx = model_.context_vectors(context);
  if (arch() == Architecture::Bi) return rank_bi(ctx, cache, k, gold);
  if (arch() == Architecture::Poly) return rank_poly(ctx, cache, k, gold);
  throw ContractError(to_string(arch()) + " models cannot score from a cache");
}

RankResult Retriever::rank_cross(std::string_view context, const std::vector<std::string>& candidates, std::size_t k,
                                 std::optional<std::uint64_t> gold) const {
  std::vector<std::uint64_t> ids(candidates.size());
  std::iota(ids.begin(), ids.end(), std::uint64_t{0});
  const auto scores = model_.cross_scores(context, candidates);
  return rank_scores(ids, scores, k, gold);
}

RankResult Retriever::rank_uncached(std::string_view context, const std::vector<std::string>& candidates,
                                    std::size_t k, std::optional<std::uint64_t> gold) const {
  if (arch() == Architecture::Cross) return rank_cross(context, candidates, k, gold);
  std::vector<std::uint64_t> ids(candidates.size());
  std::iota(ids.begin(), ids.end(), std::uint64_t{0});
  const TensorF cands = model_.embed_candidates(candidates, 1);
  const TensorF ctx = model_.context_vectors(context);
  std::vector<double> scores;
  if (arch() == Architecture::Poly) {
    // One candidate at a time, no batching.
    for (std::size_t c = 0; c < cands.rows(); ++c) {
      const TensorF one({1, cands.cols()}, std::vector<float>(cands.row(c).begin(), cands.row(c).end()));
      scores.push_back(kernels::serial::poly_scores(one, ctx).front());
    }
  } else {
    for (std::size_t c = 0; c < cands.rows(); ++c) {
      scores.push_back(kernels::serial::row_scores(
          TensorF({1, cands.cols()}, std::vector<float>(cands.row(c).begin(), cands.row(c).end())), ctx.row(0))
                           .front());
    }
  }
  return rank_scores(ids, scores, k, gold);
}

}  // namespace polyscore
