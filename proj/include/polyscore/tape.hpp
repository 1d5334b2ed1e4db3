#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "polyscore/kernels.hpp"
#include "polyscore/ops.hpp"
#include "polyscore/params.hpp"

namespace polyscore {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode gradient tape over 64-bit tensors.
///
/// A tape is built fresh for every forward pass and is confined to one
/// thread. Nodes are appended in evaluation order, so walking the node list
/// backwards is a valid reverse topological order. Gradient buffers exist
/// only for nodes that depend on a marked leaf.
class Tape {
 public:
  using Value = Var;
  using Scalar = double;

  Tape() = default;
  // Parameters are looked up by name; those for which `trainable` is true
  // are marked for gradients, the rest enter the tape as constants.
  explicit Tape(const ParamSet<double>& params, ParamPredicate trainable = {});

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Enables dropout with a deterministic mask stream.
  void set_training(bool on, std::uint64_t seed = 0);
  bool training() const { return training_; }

  Var leaf(TensorD value, bool requires_grad);
  Var constant(TensorD value) { return leaf(std::move(value), false); }
  Var param(const std::string& name);
  bool has_param(const std::string& name) const { return params_ && params_->contains(name); }

  const TensorD& value(Var v) const { return nodes_.at(v.id).value; }
  // Null when no gradient was materialized for this node.
  const TensorD* grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var gather_rows(Var table, std::span<const std::int32_t> ids);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_bias(Var a, Var bias);
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);
  Var transpose(Var a);
  Var reshape(Var a, Shape shape);
  Var gelu(Var a);
  Var softmax_rows(Var a);
  Var layer_norm(Var x, Var gain, Var bias, double eps);
  Var attention(Var q, Var k, Var v, const AttentionLayout& layout);
  Var dropout(Var x, double p);
  Var pool(Var x, std::span<const PoolGroup> groups);
  Var row_dot(Var a, Var b);
  Var concat_rows(const std::vector<Var>& parts);
  Var sum(Var a);
  Var cross_entropy(Var logits, std::span<const std::size_t> targets);
  Var logistic_loss(Var scores, std::span<const double> labels);

  // Runs the backward pass from a scalar loss.
  void backward(Var loss);

  // Gradients for every marked parameter after backward(); parameters that
  // were never touched by the forward pass get zero tensors.
  std::map<std::string, TensorD> param_gradients() const;

 private:
  struct Node {
    TensorD value;
    std::optional<TensorD> grad;
    bool requires_grad = false;
    std::function<void(Tape&, const TensorD&)> backward;
  };

  Var push(TensorD value, bool requires_grad, std::function<void(Tape&, const TensorD&)> backward = {});
  bool any_grad(std::initializer_list<Var> vs) const;
  TensorD& grad_buffer(Var v);
  void accumulate(Var v, const TensorD& g);

  std::vector<Node> nodes_;
  const ParamSet<double>* params_ = nullptr;
  ParamPredicate trainable_;
  std::unordered_map<std::string, Var> param_vars_;
  bool training_ = false;
  std::mt19937_64 rng_;
};

}  // namespace polyscore
