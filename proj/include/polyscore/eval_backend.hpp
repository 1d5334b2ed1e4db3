#pragma once

#include <string>
#include <vector>

#include "polyscore/kernels.hpp"
#include "polyscore/ops.hpp"
#include "polyscore/params.hpp"

namespace polyscore {

/// Inference backend: values are plain tensors, nothing is recorded.
/// Shares the op vocabulary of `Tape` so model code is written once.
template <typename T>
class EvalBackend {
 public:
  using Value = Tensor<T>;
  using Scalar = T;

  explicit EvalBackend(const ParamSet<T>& params) : params_(&params) {}

  const Value& param(const std::string& name) const {
    auto it = params_->find(name);
    if (it == params_->end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
  }
  bool has_param(const std::string& name) const { return params_->contains(name); }

  Value constant(Tensor<T> t) const { return t; }
  static const Tensor<T>& value(const Value& v) { return v; }
  bool training() const { return false; }

  Value gather_rows(const Value& table, std::span<const std::int32_t> ids) { return ops::gather_rows(table, ids); }
  Value add(const Value& a, const Value& b) { return ops::add(a, b); }
  Value mul(const Value& a, const Value& b) { return ops::mul(a, b); }
  Value scale(const Value& a, double s) { return ops::scale(a, static_cast<T>(s)); }
  Value add_bias(const Value& a, const Value& b) { return ops::add_bias(a, b); }
  Value matmul(const Value& a, const Value& b) { return kernels::matmul(a, b); }
  Value matmul_nt(const Value& a, const Value& b) { return kernels::matmul_nt(a, b); }
  Value transpose(const Value& a) { return ops::transpose(a); }
  Value reshape(const Value& a, Shape s) { return a.reshaped(std::move(s)); }
  Value gelu(const Value& a) { return kernels::gelu(a); }
  Value softmax_rows(const Value& a) { return kernels::softmax_rows(a); }
  Value layer_norm(const Value& x, const Value& g, const Value& b, double eps) {
    return kernels::layer_norm_rows(x, g, b, static_cast<T>(eps)).out;
  }
  Value attention(const Value& q, const Value& k, const Value& v, const AttentionLayout& layout) {
    return kernels::attention(q, k, v, layout).out;
  }
  Value dropout(const Value& x, double) { return x; }
  Value pool(const Value& x, std::span<const PoolGroup> groups) { return ops::pool(x, groups); }
  Value row_dot(const Value& a, const Value& b) { return ops::row_dot(a, b); }
  Value concat_rows(const std::vector<Value>& parts) {
    std::vector<const Tensor<T>*> ptrs;
    ptrs.reserve(parts.size());
    for (const auto& p : parts) ptrs.push_back(&p);
    return ops::concat_rows<T>(ptrs);
  }
  Value sum(const Value& a) { return ops::sum(a); }
  Value cross_entropy(const Value& logits, std::span<const std::size_t> targets) {
    return ops::cross_entropy(logits, targets);
  }
  Value logistic_loss(const Value& scores, std::span<const double> labels) {
    return ops::logistic_loss(scores, labels);
  }

 private:
  const ParamSet<T>* params_;
};

}  // namespace polyscore
