#pragma once

// Scoring heads on top of transformer outputs: reduction to one vector
// (Bi-encoder), learnt-code or row-selection context vectors with
// candidate-conditioned attention (Poly-encoder), and a linear scorer on
// the first output of a jointly encoded pair (Cross-encoder).

#include <span>
#include <string>
#include <vector>

#include "polyscore/encoder.hpp"
#include "polyscore/eval_backend.hpp"
#include "polyscore/ops.hpp"

namespace polyscore {

enum class ReductionKind { FirstOutput, AvgAll, AvgFirstM };

struct Reduction {
  ReductionKind kind = ReductionKind::FirstOutput;
  std::size_t m = 1;  // used by AvgFirstM
  bool operator==(const Reduction&) const = default;
};

enum class PolyVariant { LearntCodes, FirstM, LastM, LastMPlusH1 };

struct PolyConfig {
  PolyVariant variant = PolyVariant::LearntCodes;
  std::size_t m = 16;
  bool operator==(const PolyConfig&) const = default;
};

template <typename T>
struct PolyHeadState {
  PolyVariant variant = PolyVariant::LearntCodes;
  std::size_t m = 1;
  Tensor<T> codes;  // [m x hidden], LearntCodes only
};

template <typename T>
struct CrossHead {
  Tensor<T> weight;  // [hidden x 1]
};

std::string to_string(ReductionKind k);
std::string to_string(PolyVariant v);
ReductionKind parse_reduction_kind(std::string_view s);
PolyVariant parse_poly_variant(std::string_view s);

// Number of context vectors a variant produces for a sequence of n real tokens.
std::size_t poly_vector_count(const PolyConfig& pc, std::size_t n);

std::vector<PoolGroup> reduction_groups(const SeqBatch& batch, const Reduction& r);
// Hidden-state rows used as context vectors by the non-learnt variants.
PoolGroup real_rows(const SeqBatch& batch, std::size_t b);
std::vector<PoolGroup> selected_rows(const SeqBatch& batch, std::size_t b, const PolyConfig& pc);

// One layout describing a single unpadded-or-padded sequence.
SeqBatch single_layout(std::span<const std::uint8_t> pad_mask);

/// [batch x hidden]: one reduced vector per sequence.
template <class Backend>
ValueOf<Backend> reduce_rows(Backend& be, const ValueOf<Backend>& hidden, const SeqBatch& batch, const Reduction& r) {
  const auto groups = reduction_groups(batch, r);
  return be.pool(hidden, groups);
}

/// [m' x hidden] context vectors for sequence `b` of the batch.
template <class Backend>
ValueOf<Backend> poly_vectors(Backend& be, const ValueOf<Backend>& hidden, const SeqBatch& batch, std::size_t b,
                              const PolyConfig& pc, const std::string& codes_name) {
  if (pc.variant == PolyVariant::LearntCodes) {
    const PoolGroup rows = real_rows(batch, b);
    std::vector<PoolGroup> each;
    each.reserve(rows.size());
    for (const PoolTerm& t : rows) each.push_back({t});
    auto h = be.pool(hidden, each);  // [N x hidden], pad rows never enter
    const auto& codes = be.param(codes_name);
    auto w = be.softmax_rows(be.matmul_nt(codes, h));  // [m x N]
    return be.matmul(w, h);
  }
  const auto groups = selected_rows(batch, b, pc);
  return be.pool(hidden, groups);
}

/// Candidate-as-query attention over context vectors, then a dot product
/// with the candidate: one score per candidate row. Unscaled dot products.
template <class Backend>
ValueOf<Backend> poly_attend(Backend& be, const ValueOf<Backend>& ctx_vecs, const ValueOf<Backend>& cands) {
  auto w = be.softmax_rows(be.matmul_nt(cands, ctx_vecs));  // [n x m']
  auto pooled = be.matmul(w, ctx_vecs);                       // [n x hidden]
  return be.row_dot(pooled, cands);                           // [n]
}

/// h₁ of every sequence times the scoring column: one score per sequence.
template <class Backend>
ValueOf<Backend> cross_head_scores(Backend& be, const ValueOf<Backend>& hidden, const SeqBatch& batch,
                                   const std::string& weight_name) {
  const auto first = reduce_rows(be, hidden, batch, Reduction{ReductionKind::FirstOutput, 1});
  return be.reshape(be.matmul(first, be.param(weight_name)), Shape{batch.batch});
}

// ---- single-sequence forms ----

template <typename T>
Tensor<T> reduce(const TransformerOutput<T>& out, const Reduction& r) {
  const SeqBatch layout = single_layout(out.pad_mask);
  const ParamSet<T> none;
  EvalBackend<T> be(none);
  return reduce_rows(be, out.hidden_states, layout, r).reshaped({out.hidden_states.cols()});
}

template <typename T>
T bi_score(std::span<const T> y_ctxt, std::span<const T> y_cand) {
  if (y_ctxt.size() != y_cand.size()) throw DimensionError("bi_score: vector lengths differ");
  T acc = 0;
  for (std::size_t i = 0; i < y_ctxt.size(); ++i) acc += y_ctxt[i] * y_cand[i];
  return acc;
}

template <typename T>
Tensor<T> poly_context_vectors(const TransformerOutput<T>& out, const PolyHeadState<T>& st) {
  if (st.m < 1) throw ContractError("poly head needs m >= 1");
  const SeqBatch layout = single_layout(out.pad_mask);
  ParamSet<T> ps;
  if (st.variant == PolyVariant::LearntCodes) {
    if (st.codes.rank() != 2 || st.codes.dim(0) != st.m) throw DimensionError("poly codes must have m rows");
    ps.emplace("codes", st.codes);
  }
  EvalBackend<T> be(ps);
  return poly_vectors(be, out.hidden_states, layout, 0, PolyConfig{st.variant, st.m}, "codes");
}

template <typename T>
T poly_score(const Tensor<T>& ctx_vecs, std::span<const T> y_cand) {
  const ParamSet<T> none;
  EvalBackend<T> be(none);
  Tensor<T> cand({1, y_cand.size()}, std::vector<T>(y_cand.begin(), y_cand.end()));
  return poly_attend(be, ctx_vecs, cand)[0];
}

}  // namespace polyscore
