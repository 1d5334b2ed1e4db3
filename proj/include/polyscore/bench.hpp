#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "polyscore/retrieval.hpp"

namespace polyscore {

struct BenchArch {
  Architecture arch = Architecture::Bi;
  std::size_t poly_m = 0;  // Poly only

  // "bi", "cross", "poly<m>" (e.g. poly16)
  std::string label() const;
  bool operator==(const BenchArch&) const = default;
};

BenchArch parse_bench_arch(std::string_view s);

struct BenchSpec {
  std::vector<BenchArch> architectures;
  std::vector<std::size_t> candidate_counts{1000, 10000};
  std::size_t n_queries = 100;
  std::size_t warmup_queries = 10;
  // Cross at counts above this is measured here and scaled linearly.
  std::optional<std::size_t> extrapolate_cross_from;
  std::size_t context_tokens = 64;
  std::size_t candidate_tokens = 16;
  int threads = 1;  // inside the timed region
  std::uint64_t seed = 0;

  std::vector<std::string> problems() const;
};

struct BenchCell {
  std::string arch;
  std::size_t candidates = 0;
  std::size_t measured_candidates = 0;
  bool extrapolated = false;
  std::size_t queries = 0;
  int threads = 1;
  double mean_ms = 0;
  double median_ms = 0;
  double p95_ms = 0;
  double min_ms = 0;
  double max_ms = 0;
  double cache_build_ms = 0;  // 0 for Cross

  bool operator==(const BenchCell&) const = default;
};

struct BenchReport {
  std::vector<BenchCell> cells;
  bool operator==(const BenchReport&) const = default;
};

struct LatencyStats {
  double mean, median, p95, min, max;
};

// Nearest-rank percentiles over per-query milliseconds.
LatencyStats latency_stats(std::vector<double> ms);

struct BenchPool {
  std::vector<std::string> contexts;    // warmup queries first
  std::vector<std::string> candidates;  // at least max(candidate_counts)
};

BenchPool synthetic_pool(const Vocabulary& vocab, const BenchSpec& spec);

// Throws when the clock cannot resolve a microsecond.
void check_timer_resolution(std::chrono::nanoseconds tick);

using BenchModelSource = std::function<Model(const BenchArch&)>;

// Randomly initialised models of the given shape, one per architecture.
BenchModelSource random_models(const ModelConfig& cfg, std::uint64_t seed);

BenchReport run_bench(const BenchSpec& spec, const BenchModelSource& models, const Vocabulary& vocab,
                      const BenchPool& pool);

std::string render_table(const BenchReport& report);
std::string render_jsonl(const BenchReport& report);
BenchReport parse_jsonl(std::string_view text);

}  // namespace polyscore
