#include "polyscore/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "polyscore/kernels.hpp"

namespace polyscore {

std::string BenchArch::label() const {
  switch (arch) {
    case Architecture::Bi: return "bi";
    case Architecture::Cross: return "cross";
    case Architecture::Poly: return "poly" + std::to_string(poly_m);
    case Architecture::Pretrain: break;
  }
  return "?";
}

BenchArch parse_bench_arch(std::string_view s) {
  if (s == "bi") return {Architecture::Bi, 0};
  if (s == "cross") return {Architecture::Cross, 0};
  if (s.starts_with("poly")) {
    std::string_view digits = s.substr(4);
    if (!digits.empty() && digits.front() == ':') digits.remove_prefix(1);
    std::size_t m = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), m);
    if (ec == std::errc() && ptr == digits.data() + digits.size() && m >= 1) return {Architecture::Poly, m};
  }
  throw ConfigError("unknown bench architecture '" + std::string(s) + "' (bi | cross | poly<m>, m >= 1)");
}

std::vector<std::string> BenchSpec::problems() const {
  std::vector<std::string> out;
  for (std::size_t c : candidate_counts)
    if (c == 0) out.push_back("candidate counts must be positive");
  if (n_queries == 0) out.push_back("queries must be >= 1");
  if (extrapolate_cross_from && *extrapolate_cross_from == 0) out.push_back("extrapolate-cross-from must be >= 1");
  if (context_tokens == 0 || candidate_tokens == 0) out.push_back("synthetic token counts must be >= 1");
  if (threads < 1) out.push_back("threads must be >= 1");
  return out;
}

LatencyStats latency_stats(std::vector<double> ms) {
  if (ms.empty()) throw ContractError("no timings");
  std::sort(ms.begin(), ms.end());
  auto nearest_rank = [&](double p) {
    const auto r = static_cast<std::size_t>(std::ceil(p * static_cast<double>(ms.size())));
    return ms[std::clamp<std::size_t>(r, 1, ms.size()) - 1];
  };
  LatencyStats s;
  s.mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  s.median = nearest_rank(0.5);
  s.p95 = nearest_rank(0.95);
  s.min = ms.front();
  s.max = ms.back();
  return s;
}

BenchPool synthetic_pool(const Vocabulary& vocab, const BenchSpec& spec) {
  if (vocab.size() <= Vocabulary::kReserved) throw ContractError("vocabulary has no ordinary tokens");
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<TokenId> word(static_cast<TokenId>(Vocabulary::kReserved),
                                              static_cast<TokenId>(vocab.size() - 1));
  auto sentence = [&](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) s += ' ';
      s += vocab.token(word(rng));
    }
    return s;
  };
  BenchPool pool;
  for (std::size_t q = 0; q < spec.warmup_queries + spec.n_queries; ++q) pool.contexts.push_back(sentence(spec.context_tokens));
  std::size_t most = 0;
  for (std::size_t c : spec.candidate_counts) most = std::max(most, c);
  for (std::size_t c = 0; c < most; ++c) pool.candidates.push_back(sentence(spec.candidate_tokens));
  return pool;
}

void check_timer_resolution(std::chrono::nanoseconds tick) {
  if (tick > std::chrono::microseconds(1)) {
    throw Error("timer resolution " + std::to_string(tick.count()) + " ns is coarser than 1 us");
  }
}

BenchModelSource random_models(const ModelConfig& cfg, std::uint64_t seed) {
  return [cfg, seed](const BenchArch& a) {
    HeadConfig h;
    h.arch = a.arch;
    if (a.arch == Architecture::Poly) h.poly = {PolyVariant::LearntCodes, a.poly_m};
    return init_model(cfg, h, seed);
  };
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Restores the worker count when the timed region ends.
class ThreadScope {
 public:
  explicit ThreadScope(int n) : saved_(num_threads()) { set_num_threads(n); }
  ~ThreadScope() { set_num_threads(saved_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int saved_;
};

}  // namespace

BenchReport run_bench(const BenchSpec& spec, const BenchModelSource& models, const Vocabulary& vocab,
                      const BenchPool& pool) {
  if (auto p = spec.problems(); !p.empty()) throw ConfigError("invalid bench spec: " + p.front());
  check_timer_resolution(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::duration(1)));
  if (pool.contexts.size() < spec.warmup_queries + spec.n_queries) throw ContractError("not enough bench queries");
  BenchReport report;
  for (const BenchArch& a : spec.architectures) {
    const Retriever ret(models(a), vocab);
    // An extrapolated cell reuses the timings of its measured sub-count.
    std::map<std::size_t, std::pair<std::vector<double>, double>> measured;
    for (std::size_t count : spec.candidate_counts) {
      BenchCell cell;
      cell.arch = a.label();
      cell.candidates = count;
      cell.measured_candidates = count;
      if (a.arch == Architecture::Cross && spec.extrapolate_cross_from && count > *spec.extrapolate_cross_from) {
        cell.measured_candidates = *spec.extrapolate_cross_from;
        cell.extrapolated = true;
      }
      if (pool.candidates.size() < cell.measured_candidates) throw ContractError("candidate pool too small");
      const std::vector<std::string> cands(pool.candidates.begin(),
                                           pool.candidates.begin() + static_cast<std::ptrdiff_t>(cell.measured_candidates));
      std::optional<CandidateCache> cache;
      if (a.arch != Architecture::Cross) {
        const auto t0 = Clock::now();
        cache = ret.build_cache(cands);
        cell.cache_build_ms = elapsed_ms(t0);
      }
      std::vector<double> times;
      if (auto it = measured.find(cell.measured_candidates); it != measured.end()) {
        times = it->second.first;
        cell.cache_build_ms = it->second.second;
        cell.threads = spec.threads;
      } else {
        ThreadScope scope(spec.threads);
        cell.threads = num_threads();
        for (std::size_t q = 0; q < spec.warmup_queries + spec.n_queries; ++q) {
          const auto t0 = Clock::now();
          if (cache) {
            (void)ret.rank(pool.contexts[q], *cache, 1);
          } else {
            (void)ret.rank_cross(pool.contexts[q], cands, 1);
          }
          const double ms = elapsed_ms(t0);
          if (q >= spec.warmup_queries) times.push_back(ms);
        }
        measured[cell.measured_candidates] = {times, cell.cache_build_ms};
      }
      const double scale =
          static_cast<double>(cell.candidates) / static_cast<double>(cell.measured_candidates);
      if (cell.extrapolated) {
        for (double& t : times) t *= scale;
      }
      const LatencyStats s = latency_stats(times);
      cell.queries = times.size();
      cell.mean_ms = s.mean;
      cell.median_ms = s.median;
      cell.p95_ms = s.p95;
      cell.min_ms = s.min;
      cell.max_ms = s.max;
      report.cells.push_back(cell);
    }
  }
  return report;
}

std::string render_table(const BenchReport& report) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %10s %12s %12s %12s %12s %12s %8s %7s %14s\n", "arch", "candidates",
                "mean_ms", "median_ms", "p95_ms", "min_ms", "max_ms", "queries", "threads", "cache_build_ms");
  os << line;
  bool any_extrapolated = false;
  for (const auto& c : report.cells) {
    const std::string count = std::to_string(c.candidates) + (c.extrapolated ? "*" : "");
    any_extrapolated |= c.extrapolated;
    std::snprintf(line, sizeof line, "%-10s %10s %12.3f %12.3f %12.3f %12.3f %12.3f %8zu %7d %14.3f\n",
                  c.arch.c_str(), count.c_str(), c.mean_ms, c.median_ms, c.p95_ms, c.min_ms, c.max_ms, c.queries,
                  c.threads, c.cache_build_ms);
    os << line;
  }
  if (any_extrapolated) os << "* inferred by linear scaling from a measured sub-count\n";
  return os.str();
}

std::string render_jsonl(const BenchReport& report) {
  std::string out;
  for (const auto& c : report.cells) {
    nlohmann::ordered_json j;
    j["arch"] = c.arch;
    j["candidates"] = c.candidates;
    j["measured_candidates"] = c.measured_candidates;
    j["extrapolated"] = c.extrapolated;
    j["queries"] = c.queries;
    j["threads"] = c.threads;
    j["mean_ms"] = c.mean_ms;
    j["median_ms"] = c.median_ms;
    j["p95_ms"] = c.p95_ms;
    j["min_ms"] = c.min_ms;
    j["max_ms"] = c.max_ms;
    j["cache_build_ms"] = c.cache_build_ms;
    out += j.dump();
    out += '\n';
  }
  return out;
}

BenchReport parse_jsonl(std::string_view text) {
  BenchReport r;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      BenchCell c;
      c.arch = j.at("arch").get<std::string>();
      c.candidates = j.at("candidates").get<std::size_t>();
      c.measured_candidates = j.at("measured_candidates").get<std::size_t>();
      c.extrapolated = j.at("extrapolated").get<bool>();
      c.queries = j.at("queries").get<std::size_t>();
      c.threads = j.at("threads").get<int>();
      c.mean_ms = j.at("mean_ms").get<double>();
      c.median_ms = j.at("median_ms").get<double>();
      c.p95_ms = j.at("p95_ms").get<double>();
      c.min_ms = j.at("min_ms").get<double>();
      c.max_ms = j.at("max_ms").get<double>();
      c.cache_build_ms = j.at("cache_build_ms").get<double>();
      r.cells.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("bench report line " + std::to_string(n) + ": " + e.what());
    }
  }
  return r;
}

}  // namespace polyscore
