#pragma once

// Dense kernels shared by the inference path and the gradient tape.
//
// Every kernel has two entry points: `kernels::` runs data-parallel with
// OpenMP over independent output rows (or batch/head pairs), and
// `kernels::serial::` runs the identical loop nest on the calling thread.
// Each output element is produced by exactly one thread with a fixed
// reduction order, so both entry points are bit-identical for any thread
// count.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "polyscore/tensor.hpp"

namespace polyscore {

// Thread cap for the parallel kernels. Defaults to POLYSCORE_THREADS when
// set, otherwise the OpenMP default.
int num_threads();
void set_num_threads(int n);

struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t heads = 1;
  // batch * seq_len entries, nonzero for real (non-pad) tokens.
  std::span<const std::uint8_t> key_mask;
};

template <typename T>
struct AttentionResult {
  Tensor<T> out;    // [batch*seq_len x hidden]
  Tensor<T> probs;  // [batch x heads x seq_len x seq_len]
};

template <typename T>
struct LayerNormResult {
  Tensor<T> out;
  std::vector<T> mean;
  std::vector<T> rstd;
};

namespace kernels {

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a · bᵀ
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
// aᵀ · b
template <typename T> Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
template <typename T>
LayerNormResult<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
AttentionResult<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             const AttentionLayout& layout);

template <typename T>
struct AttentionGrads {
  Tensor<T> dq, dk, dv;
};
template <typename T>
AttentionGrads<T> attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const Tensor<T>& probs, const Tensor<T>& dout,
                                     const AttentionLayout& layout);

// scores[c] = rows[c] · query, accumulated in double.
template <typename T>
std::vector<double> row_scores(const Tensor<T>& rows, std::span<const T> query);

// Candidate-conditioned attention over context vectors, one score per
// candidate row: softmax(cand·ctxᵀ) pooled context dotted with cand.
// Accumulates in double.
template <typename T>
std::vector<double> poly_scores(const Tensor<T>& candidates, const Tensor<T>& context_vectors);

namespace serial {
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
AttentionResult<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             const AttentionLayout& layout);
template <typename T>
std::vector<double> row_scores(const Tensor<T>& rows, std::span<const T> query);
template <typename T>
std::vector<double> poly_scores(const Tensor<T>& candidates, const Tensor<T>& context_vectors);
}  // namespace serial

}  // namespace kernels
}  // namespace polyscore
