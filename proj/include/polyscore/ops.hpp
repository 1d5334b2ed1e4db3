#pragma once

// Forward definitions of the elementwise / structural primitives. The
// inference backend calls these directly; the gradient tape calls them for
// its forward values and adds the matching backward rules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "polyscore/kernels.hpp"
#include "polyscore/tensor.hpp"

namespace polyscore {

struct PoolTerm {
  std::size_t row;
  double weight;
};
// One output row: Σ weight · x[row] over the terms.
using PoolGroup = std::vector<PoolTerm>;

namespace ops {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (T& v : out.data()) v *= s;
  return out;
}

// Bias broadcast over the last axis.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  if (bias.numel() != a.cols()) {
    throw DimensionError("add_bias: input " + shape_str(a.shape()) + " vs bias " + shape_str(bias.shape()));
  }
  Tensor<T> out = a;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(a.shape()));
  Tensor<T> out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be a matrix");
  const std::size_t h = table.dim(1);
  Tensor<T> out({ids.size(), h});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.dim(0)) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(table.dim(0)) + " rows");
    }
    std::copy_n(table.row(static_cast<std::size_t>(ids[i])).data(), h, out.row(i).data());
  }
  return out;
}

template <typename T>
Tensor<T> pool(const Tensor<T>& x, std::span<const PoolGroup> groups) {
  const std::size_t h = x.cols();
  Tensor<T> out({groups.size(), h});
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto dst = out.row(g);
    for (const PoolTerm& t : groups[g]) {
      if (t.row >= x.rows()) throw DimensionError("pool: row index out of range");
      auto src = x.row(t.row);
      const T w = static_cast<T>(t.weight);
      for (std::size_t j = 0; j < h; ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

// out[r] = a[r] · b[r]; shape [rows].
template <typename T>
Tensor<T> row_dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("row_dot", a, b);
  Tensor<T> out({a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto ra = a.row(r);
    auto rb = b.row(r);
    T acc = 0;
    for (std::size_t j = 0; j < ra.size(); ++j) acc += ra[j] * rb[j];
    out[r] = acc;
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t h = parts.front()->cols();
  std::size_t rows = 0;
  for (const auto* p : parts) {
    if (p->cols() != h) throw DimensionError("concat_rows: column counts differ");
    rows += p->rows();
  }
  std::vector<T> data;
  data.reserve(rows * h);
  for (const auto* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
  return Tensor<T>({rows, h}, std::move(data));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (T v : a.data()) acc += v;
  return Tensor<T>::scalar(acc);
}

// Mean over rows of softmax cross-entropy with one target column per row.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets) {
  if (targets.size() != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  T total = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    if (targets[r] >= row.size()) throw ContractError("cross_entropy: target out of range");
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : row) {
      if (std::isnan(v)) throw NumericError("cross_entropy: NaN logit");
      mx = std::max(mx, v);
    }
    T z = 0;
    for (T v : row) z += std::exp(v - mx);
    total += mx + std::log(z) - row[targets[r]];
  }
  return Tensor<T>::scalar(total / static_cast<T>(logits.rows()));
}

template <typename T>
T softplus(T x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Mean binary logistic loss; labels are 0 or 1.
template <typename T>
Tensor<T> logistic_loss(const Tensor<T>& scores, std::span<const double> labels) {
  if (labels.size() != scores.numel()) throw DimensionError("logistic_loss: label count mismatch");
  T total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += labels[i] > 0.5 ? softplus(-scores[i]) : softplus(scores[i]);
  }
  return Tensor<T>::scalar(total / static_cast<T>(labels.size()));
}

}  // namespace ops
}  // namespace polyscore
