#include "polyscore/heads.hpp"

#include <algorithm>

namespace polyscore {

std::string to_string(ReductionKind k) {
  switch (k) {
    case ReductionKind::FirstOutput: return "first";
    case ReductionKind::AvgAll: return "avg";
    case ReductionKind::AvgFirstM: return "avg_first_m";
  }
  return "?";
}

std::string to_string(PolyVariant v) {
  switch (v) {
    case PolyVariant::LearntCodes: return "learnt";
    case PolyVariant::FirstM: return "first";
    case PolyVariant::LastM: return "last";
    case PolyVariant::LastMPlusH1: return "last_h1";
  }
  return "?";
}

ReductionKind parse_reduction_kind(std::string_view s) {
  if (s == "first") return ReductionKind::FirstOutput;
  if (s == "avg") return ReductionKind::AvgAll;
  if (s == "avg_first_m") return ReductionKind::AvgFirstM;
  throw ConfigError("unknown reduction '" + std::string(s) + "' (first | avg | avg_first_m)");
}

PolyVariant parse_poly_variant(std::string_view s) {
  if (s == "learnt") return PolyVariant::LearntCodes;
  if (s == "first") return PolyVariant::FirstM;
  if (s == "last") return PolyVariant::LastM;
  if (s == "last_h1") return PolyVariant::LastMPlusH1;
  throw ConfigError("unknown poly variant '" + std::string(s) + "' (learnt | first | last | last_h1)");
}

std::size_t poly_vector_count(const PolyConfig& pc, std::size_t n) {
  switch (pc.variant) {
    case PolyVariant::LearntCodes: return pc.m;
    case PolyVariant::FirstM:
    case PolyVariant::LastM: return std::min(pc.m, n);
    case PolyVariant::LastMPlusH1: return std::min(pc.m, n) + 1;
  }
  return 0;
}

std::vector<PoolGroup> reduction_groups(const SeqBatch& batch, const Reduction& r) {
  std::vector<PoolGroup> groups(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const std::size_t n = batch.lengths[b];
    std::size_t take = 1;
    if (r.kind == ReductionKind::AvgAll) take = n;
    if (r.kind == ReductionKind::AvgFirstM) {
      if (r.m < 1) throw ContractError("AvgFirstM needs m >= 1");
      take = std::min(r.m, n);
    }
    const double w = 1.0 / static_cast<double>(take);
    for (std::size_t i = 0; i < take; ++i) groups[b].push_back({batch.row(b, i), w});
  }
  return groups;
}

PoolGroup real_rows(const SeqBatch& batch, std::size_t b) {
  PoolGroup g;
  for (std::size_t i = 0; i < batch.seq_len; ++i)
    if (batch.mask[batch.row(b, i)]) g.push_back({batch.row(b, i), 1.0});
  return g;
}

std::vector<PoolGroup> selected_rows(const SeqBatch& batch, std::size_t b, const PolyConfig& pc) {
  if (pc.m < 1) throw ContractError("poly head needs m >= 1");
  const PoolGroup rows = real_rows(batch, b);
  const std::size_t n = rows.size();
  const std::size_t k = std::min(pc.m, n);
  std::vector<PoolGroup> out;
  switch (pc.variant) {
    case PolyVariant::FirstM:
      for (std::size_t i = 0; i < k; ++i) out.push_back({rows[i]});
      break;
    case PolyVariant::LastMPlusH1:
      out.push_back({rows[0]});
      [[fallthrough]];
    case PolyVariant::LastM:
      for (std::size_t i = n - k; i < n; ++i) out.push_back({rows[i]});
      break;
    case PolyVariant::LearntCodes:
      throw ContractError("selected_rows: learnt codes do not select rows");
  }
  return out;
}

SeqBatch single_layout(std::span<const std::uint8_t> pad_mask) {
  SeqBatch b;
  b.batch = 1;
  b.seq_len = pad_mask.size();
  b.mask.assign(pad_mask.begin(), pad_mask.end());
  std::size_t n = 0;
  for (auto m : pad_mask) n += m ? 1 : 0;
  if (n == 0) throw ContractError("sequence has no real tokens");
  b.lengths = {n};
  return b;
}

}  // namespace polyscore
