#include "polyscore/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace polyscore {

namespace {

int initial_threads() {
  int n = 1;
#ifdef _OPENMP
  n = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("POLYSCORE_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return std::max(n, 1);
}

int g_threads = initial_threads();

void require_matrix(const char* op, const Shape& a) {
  if (a.size() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a));
}

}  // namespace

int num_threads() { return g_threads; }
void set_num_threads(int n) { g_threads = std::max(n, 1); }

namespace kernels {
namespace impl {

template <bool Par, typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul", a.shape());
  require_matrix("matmul", b.shape());
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), kk = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for if (Par) num_threads(num_threads()) schedule(static)
  for (long long i = 0; i < rows; ++i) {
    T* crow = pc + i * n;
    const T* arow = pa + i * kk;
    for (std::size_t k = 0; k < kk; ++k) {
      const T aik = arow[k];
      const T* brow = pb + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

template <bool Par, typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul_nt", a.shape());
  require_matrix("matmul_nt", b.shape());
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  const std::size_t m = a.dim(0), kk = a.dim(1), n = b.dim(0);
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for if (Par) num_threads(num_threads()) schedule(static)
  for (long long i = 0; i < rows; ++i) {
    const T* arow = pa + i * kk;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = pb + j * kk;
      T acc = 0;
      for (std::size_t k = 0; k < kk; ++k) acc += arow[k] * brow[k];
      pc[i * n + j] = acc;
    }
  }
  return c;
}

template <bool Par, typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul_tn", a.shape());
  require_matrix("matmul_tn", b.shape());
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn: inner dimensions differ, " + shape_str(a.shape()) + "^T x " +
                         shape_str(b.shape()));
  }
  const std::size_t kk = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for if (Par) num_threads(num_threads()) schedule(static)
  for (long long i = 0; i < rows; ++i) {
    T* crow = pc + i * n;
    for (std::size_t k = 0; k < kk; ++k) {
      const T aki = pa[k * m + i];
      const T* brow = pb + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

template <bool Par, typename T>
AttentionResult<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             const AttentionLayout& lay) {
  const std::size_t rows = lay.batch * lay.seq_len;
  if (q.shape() != k.shape() || q.shape() != v.shape() || q.rank() != 2 || q.dim(0) != rows) {
    throw DimensionError("attention: q/k/v shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()) + " do not match layout");
  }
  if (lay.key_mask.size() != rows) throw DimensionError("attention: key mask length mismatch");
  const std::size_t hidden = q.dim(1);
  if (hidden % lay.heads != 0) throw DimensionError("attention: hidden not divisible by heads");
  const std::size_t dh = hidden / lay.heads;
  const std::size_t L = lay.seq_len;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  AttentionResult<T> res{Tensor<T>({rows, hidden}), Tensor<T>({lay.batch, lay.heads, L, L})};
  const T* pq = q.data().data();
  const T* pk = k.data().data();
  const T* pv = v.data().data();
  T* po = res.out.data().data();
  T* pp = res.probs.data().data();
  const long long pairs = static_cast<long long>(lay.batch * lay.heads);

#pragma omp parallel for if (Par) num_threads(num_threads()) schedule(static)
  for (long long bh = 0; bh < pairs; ++bh) {
    const std::size_t b = static_cast<std::size_t>(bh) / lay.heads;
    const std::size_t h = static_cast<std::size_t>(bh) % lay.heads;
    const std::uint8_t* mask = lay.key_mask.data() + b * L;
    T* probs = pp + static_cast<std::size_t>(bh) * L * L;
    for (std::size_t i = 0; i < L; ++i) {
      const T* qi = pq + (b * L + i) * hidden + h * dh;
      T* pi = probs + i * L;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < L; ++j) {
        if (!mask[j]) {
          pi[j] = -std::numeric_limits<T>::infinity();
          continue;
        }
        const T* kj = pk + (b * L + j) * hidden + h * dh;
        T acc = 0;
        for (std::size_t d = 0; d < dh; ++d) acc += qi[d] * kj[d];
        pi[j] = acc * scale;
        mx = std::max(mx, pi[j]);
      }
      T sum = 0;
      for (std::size_t j = 0; j < L; ++j) {
        pi[j] = mask[j] ? std::exp(pi[j] - mx) : T{0};
        sum += pi[j];
      }
      for (std::size_t j = 0; j < L; ++j) pi[j] /= sum;
      T* oi = po + (b * L + i) * hidden + h * dh;
      for (std::size_t j = 0; j < L; ++j) {
        if (!mask[j]) continue;
        const T w = pi[j];
        const T* vj = pv + (b * L + j) * hidden + h * dh;
        for (std::size_t d = 0; d < dh; ++d) oi[d] += w * vj[d];
      }
    }
  }
  return res;
}

template <bool Par, typename T>
AttentionGrads<T> attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const Tensor<T>& probs, const Tensor<T>& dout, const AttentionLayout& lay) {
  const std::size_t rows = lay.batch * lay.seq_len;
  const std::size_t hidden = q.dim(1);
  const std::size_t dh = hidden / lay.heads;
  const std::size_t L = lay.seq_len;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  AttentionGrads<T> g{Tensor<T>({rows, hidden}), Tensor<T>({rows, hidden}), Tensor<T>({rows, hidden})};
  const T* pq = q.data().data();
  const T* pk = k.data().data();
  const T* pv = v.data().data();
  const T* pp = probs.data().data();
  const T* pdo = dout.data().data();
  T* pdq = g.dq.data().data();
  T* pdk = g.dk.data().data();
  T* pdv = g.dv.data().data();
  const long long pairs = static_cast<long long>(lay.batch * lay.heads);

#pragma omp parallel for if (Par) num_threads(num_threads()) schedule(static)
  for (long long bh = 0; bh < pairs; ++bh) {
    const std::size_t b = static_cast<std::size_t>(bh) / lay.heads;
    const std::size_t h = static_cast<std::size_t>(bh) % lay.heads;
    const T* P = pp + static_cast<std::size_t>(bh) * L * L;
    std::vector<T> dscore(L);
    for (std::size_t i = 0; i < L; ++i) {
      const T* doi = pdo + (b * L + i) * hidden + h * dh;
      const T* pi = P + i * L;
      // dP_ij = dO_i · V_j ; dV_j += P_ij dO_i
      T dot_pdp = 0;
      for (std::size_t j = 0; j < L; ++j) {
        if (pi[j] == T{0}) {
          dscore[j] = 0;
          continue;
        }
        const T* vj = pv + (b * L + j) * hidden + h * dh;
        T* dvj = pdv + (b * L + j) * hidden + h * dh;
        T acc = 0;
        for (std::size_t d = 0; d < dh; ++d) {
          acc += doi[d] * vj[d];
          dvj[d] += pi[j] * doi[d];
        }
        dscore[j] = acc;
        dot_pdp += acc * pi[j];
      }
      const T* qi = pq + (b * L + i) * hidden + h * dh;
      T* dqi = pdq + (b * L + i) * hidden + h * dh;
      for (std::size_t j = 0; j < L; ++j) {
        if (pi[j] == T{0}) continue;
        const T ds = pi[j] * (dscore[j] - dot_pdp) * scale;
        const T* kj = pk + (b * L + j) * hidden + h * dh;
        T* dkj = pdk + (b * L + j) * hidden + h * dh;
        for (std::size_t d = 0; d < dh; ++d) {
          dqi[d] += ds * kj[d];
          dkj[d] += ds * qi[d];
        }
      }
    }
  }
  return g;
}

template <bool Par, typename T>
std::vector<double> row_scores(const Tensor<T>& rows, std::span<const T> query) {
  require_matrix("row_scores", rows.shape());
  if (rows.dim(1) != query.size()) {
    throw DimensionError("row_scores: rows " + shape_str(rows.shape()) + " vs query of length " +
                         std::to_string(query.size()));
  }
  const std::size_t n = rows.dim(0), h = rows.dim(1);
  std::vector<double> out(n);
  const T* pr = rows.data().data();
  const long long count = static_cast<long long>(n);
#pragma omp parallel for if (Par) num_threads(num_threads()) schedule(static)
  for (long long c = 0; c < count; ++c) {
    const T* r = pr + c * h;
    double acc = 0;
    for (std::size_t d = 0; d < h; ++d) acc += static_cast<double>(r[d]) * static_cast<double>(query[d]);
    out[c] = acc;
  }
  return out;
}

template <bool Par, typename T>
std::vector<double> poly_scores(const Tensor<T>& cands, const Tensor<T>& ctx) {
  require_matrix("poly_scores", cands.shape());
  require_matrix("poly_scores", ctx.shape());
  if (cands.dim(1) != ctx.dim(1)) {
    throw DimensionError("poly_scores: candidates " + shape_str(cands.shape()) + " vs context vectors " +
                         shape_str(ctx.shape()));
  }
  const std::size_t n = cands.dim(0), h = cands.dim(1), m = ctx.dim(0);
  std::vector<double> out(n);
  const T* pc = cands.data().data();
  const T* px = ctx.data().data();
  const long long count = static_cast<long long>(n);
#pragma omp parallel for if (Par) num_threads(num_threads()) schedule(static)
  for (long long c = 0; c < count; ++c) {
    std::vector<double> logits(m);
    const T* y = pc + c * h;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      const T* xi = px + i * h;
      double acc = 0;
      for (std::size_t d = 0; d < h; ++d) acc += static_cast<double>(y[d]) * static_cast<double>(xi[d]);
      logits[i] = acc;
      mx = std::max(mx, acc);
    }
    double z = 0, s = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const double e = std::exp(logits[i] - mx);
      z += e;
      s += e * logits[i];
    }
    // Σ_i w_i (y · ctx_i) equals (Σ_i w_i ctx_i) · y.
    out[c] = s / z;
  }
  return out;
}

}  // namespace impl

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) { return impl::matmul<true>(a, b); }
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) { return impl::matmul_nt<true>(a, b); }
template <typename T> Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) { return impl::matmul_tn<true>(a, b); }

template <typename T>
AttentionResult<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionLayout& l) {
  return impl::attention<true>(q, k, v, l);
}
template <typename T>
AttentionGrads<T> attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const Tensor<T>& probs, const Tensor<T>& dout, const AttentionLayout& l) {
  return impl::attention_backward<true>(q, k, v, probs, dout, l);
}
template <typename T>
std::vector<double> row_scores(const Tensor<T>& rows, std::span<const T> query) {
  return impl::row_scores<true>(rows, query);
}
template <typename T>
std::vector<double> poly_scores(const Tensor<T>& cands, const Tensor<T>& ctx) {
  return impl::poly_scores<true>(cands, ctx);
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> out = x;
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : row) {
      if (std::isnan(v)) throw NumericError("softmax: NaN input");
      mx = std::max(mx, v);
    }
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
  return out;
}

template <typename T>
LayerNormResult<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " vs gain " + shape_str(gain.shape()) +
                         " / bias " + shape_str(bias.shape()));
  }
  LayerNormResult<T> res{Tensor<T>(x.shape()), std::vector<T>(x.rows()), std::vector<T>(x.rows())};
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto out = res.out.row(r);
    T mean = 0;
    for (T v : in) mean += v;
    mean /= static_cast<T>(n);
    T var = 0;
    for (T v : in) var += (v - mean) * (v - mean);
    var /= static_cast<T>(n);
    const T rstd = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[j] = gain[j] * (in[j] - mean) * rstd + bias[j];
    res.mean[r] = mean;
    res.rstd[r] = rstd;
  }
  return res;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kSqrt2OverPi = static_cast<T>(0.7978845608028654);
  constexpr T kCubic = static_cast<T>(0.044715);
  Tensor<T> out = x;
  for (T& v : out.data()) v = T{0.5} * v * (T{1} + std::tanh(kSqrt2OverPi * (v + kCubic * v * v * v)));
  return out;
}

namespace serial {
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) { return impl::matmul<false>(a, b); }
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) { return impl::matmul_nt<false>(a, b); }
template <typename T> Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) { return impl::matmul_tn<false>(a, b); }
template <typename T>
AttentionResult<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionLayout& l) {
  return impl::attention<false>(q, k, v, l);
}
template <typename T>
std::vector<double> row_scores(const Tensor<T>& rows, std::span<const T> query) {
  return impl::row_scores<false>(rows, query);
}
template <typename T>
std::vector<double> poly_scores(const Tensor<T>& cands, const Tensor<T>& ctx) {
  return impl::poly_scores<false>(cands, ctx);
}
}  // namespace serial

#define POLYSCORE_INSTANTIATE(T)                                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                          \
  template LayerNormResult<T> layer_norm_rows(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> gelu(const Tensor<T>&);                                                                  \
  template AttentionResult<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                        const AttentionLayout&);                                              \
  template AttentionGrads<T> attention_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                                const Tensor<T>&, const Tensor<T>&, const AttentionLayout&);  \
  template std::vector<double> row_scores(const Tensor<T>&, std::span<const T>);                              \
  template std::vector<double> poly_scores(const Tensor<T>&, const Tensor<T>&);                               \
  namespace serial {                                                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                                           \
  template AttentionResult<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                                        const AttentionLayout&);                                              \
  template std::vector<double> row_scores(const Tensor<T>&, std::span<const T>);                              \
  template std::vector<double> poly_scores(const Tensor<T>&, const Tensor<T>&);                               \
  }

POLYSCORE_INSTANTIATE(float)
POLYSCORE_INSTANTIATE(double)

#undef POLYSCORE_INSTANTIATE

}  // namespace kernels

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace polyscore
