#include "polyscore/tape.hpp"

#include <cmath>

namespace polyscore {

Tape::Tape(const ParamSet<double>& params, ParamPredicate trainable)
    : params_(&params), trainable_(std::move(trainable)) {}

void Tape::set_training(bool on, std::uint64_t seed) {
  training_ = on;
  rng_.seed(seed);
}

Var Tape::push(TensorD value, bool requires_grad, std::function<void(Tape&, const TensorD&)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

bool Tape::any_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs)
    if (nodes_.at(v.id).requires_grad) return true;
  return false;
}

const TensorD* Tape::grad(Var v) const {
  const auto& g = nodes_.at(v.id).grad;
  return g ? &*g : nullptr;
}

TensorD& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (!n.grad) n.grad.emplace(n.value.shape());
  return *n.grad;
}

void Tape::accumulate(Var v, const TensorD& g) {
  if (!nodes_[v.id].requires_grad) return;
  TensorD& buf = grad_buffer(v);
  for (std::size_t i = 0; i < buf.numel(); ++i) buf[i] += g[i];
}

Var Tape::leaf(TensorD value, bool requires_grad) { return push(std::move(value), requires_grad); }

Var Tape::param(const std::string& name) {
  if (auto it = param_vars_.find(name); it != param_vars_.end()) return it->second;
  if (!params_) throw ConfigError("tape has no parameter set bound");
  auto it = params_->find(name);
  if (it == params_->end()) throw ConfigError("missing parameter '" + name + "'");
  const bool marked = !trainable_ || trainable_(name);
  Var v = leaf(it->second, marked);
  param_vars_.emplace(name, v);
  return v;
}

std::map<std::string, TensorD> Tape::param_gradients() const {
  std::map<std::string, TensorD> out;
  if (!params_) return out;
  for (const auto& [name, t] : *params_) {
    if (trainable_ && !trainable_(name)) continue;
    auto it = param_vars_.find(name);
    if (it != param_vars_.end() && grad(it->second)) {
      out.emplace(name, *grad(it->second));
    } else {
      out.emplace(name, TensorD(t.shape()));
    }
  }
  return out;
}

void Tape::backward(Var loss) {
  if (value(loss).numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(value(loss).shape()));
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad || !n.backward) continue;
    // The closure only touches earlier nodes, so this reference stays valid.
    const TensorD& g = *n.grad;
    n.backward(*this, g);
  }
}

Var Tape::gather_rows(Var table, std::span<const std::int32_t> ids) {
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return push(ops::gather_rows(value(table), ids), any_grad({table}), [table, idx](Tape& t, const TensorD& g) {
    TensorD& gt = t.grad_buffer(table);
    const std::size_t h = gt.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = gt.row(static_cast<std::size_t>(idx[i]));
      auto src = g.row(i);
      for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
    }
  });
}

Var Tape::add(Var a, Var b) {
  return push(ops::add(value(a), value(b)), any_grad({a, b}), [a, b](Tape& t, const TensorD& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var Tape::mul(Var a, Var b) {
  return push(ops::mul(value(a), value(b)), any_grad({a, b}), [a, b](Tape& t, const TensorD& g) {
    t.accumulate(a, ops::mul(g, t.value(b)));
    t.accumulate(b, ops::mul(g, t.value(a)));
  });
}

Var Tape::scale(Var a, double s) {
  return push(ops::scale(value(a), s), any_grad({a}),
              [a, s](Tape& t, const TensorD& g) { t.accumulate(a, ops::scale(g, s)); });
}

Var Tape::add_bias(Var a, Var bias) {
  return push(ops::add_bias(value(a), value(bias)), any_grad({a, bias}), [a, bias](Tape& t, const TensorD& g) {
    t.accumulate(a, g);
    if (t.nodes_[bias.id].requires_grad) {
      TensorD& gb = t.grad_buffer(bias);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
      }
    }
  });
}

Var Tape::matmul(Var a, Var b) {
  return push(kernels::matmul(value(a), value(b)), any_grad({a, b}), [a, b](Tape& t, const TensorD& g) {
    if (t.nodes_[a.id].requires_grad) t.accumulate(a, kernels::matmul_nt(g, t.value(b)));
    if (t.nodes_[b.id].requires_grad) t.accumulate(b, kernels::matmul_tn(t.value(a), g));
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  // c = a bᵀ: da = g b, db = gᵀ a
  return push(kernels::matmul_nt(value(a), value(b)), any_grad({a, b}), [a, b](Tape& t, const TensorD& g) {
    if (t.nodes_[a.id].requires_grad) t.accumulate(a, kernels::matmul(g, t.value(b)));
    if (t.nodes_[b.id].requires_grad) t.accumulate(b, kernels::matmul_tn(g, t.value(a)));
  });
}

Var Tape::transpose(Var a) {
  return push(ops::transpose(value(a)), any_grad({a}),
              [a](Tape& t, const TensorD& g) { t.accumulate(a, ops::transpose(g)); });
}

Var Tape::reshape(Var a, Shape shape) {
  return push(value(a).reshaped(std::move(shape)), any_grad({a}),
              [a](Tape& t, const TensorD& g) { t.accumulate(a, g.reshaped(t.value(a).shape())); });
}

Var Tape::gelu(Var a) {
  return push(kernels::gelu(value(a)), any_grad({a}), [a](Tape& t, const TensorD& g) {
    constexpr double c = 0.7978845608028654;
    constexpr double k = 0.044715;
    const TensorD& x = t.value(a);
    TensorD d(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double v = x[i];
      const double u = c * (v + k * v * v * v);
      const double th = std::tanh(u);
      const double du = c * (1.0 + 3.0 * k * v * v);
      d[i] = g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
    t.accumulate(a, d);
  });
}

Var Tape::softmax_rows(Var a) {
  Var out = push(kernels::softmax_rows(value(a)), any_grad({a}));
  if (nodes_[out.id].requires_grad) {
    nodes_[out.id].backward = [a, out](Tape& t, const TensorD& g) {
      const TensorD& y = t.value(out);
      TensorD d(y.shape());
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = g.row(r);
        double dot = 0;
        for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
        auto dr = d.row(r);
        for (std::size_t j = 0; j < yr.size(); ++j) dr[j] = yr[j] * (gr[j] - dot);
      }
      t.accumulate(a, d);
    };
  }
  return out;
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  auto res = kernels::layer_norm_rows(value(x), value(gain), value(bias), eps);
  return push(std::move(res.out), any_grad({x, gain, bias}),
              [x, gain, bias, mean = std::move(res.mean), rstd = std::move(res.rstd)](Tape& t, const TensorD& g) {
                const TensorD& in = t.value(x);
                const TensorD& gm = t.value(gain);
                const std::size_t n = in.cols();
                const bool want_x = t.nodes_[x.id].requires_grad;
                const bool want_g = t.nodes_[gain.id].requires_grad;
                const bool want_b = t.nodes_[bias.id].requires_grad;
                TensorD dx(in.shape());
                TensorD dg(gm.shape());
                TensorD db(gm.shape());
                std::vector<double> xhat(n), dxhat(n);
                for (std::size_t r = 0; r < in.rows(); ++r) {
                  auto xr = in.row(r);
                  auto gr = g.row(r);
                  double s1 = 0, s2 = 0;
                  for (std::size_t j = 0; j < n; ++j) {
                    xhat[j] = (xr[j] - mean[r]) * rstd[r];
                    dxhat[j] = gr[j] * gm[j];
                    dg[j] += gr[j] * xhat[j];
                    db[j] += gr[j];
                    s1 += dxhat[j];
                    s2 += dxhat[j] * xhat[j];
                  }
                  if (want_x) {
                    auto dr = dx.row(r);
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                      dr[j] = rstd[r] * (dxhat[j] - inv_n * s1 - xhat[j] * inv_n * s2);
                    }
                  }
                }
                if (want_x) t.accumulate(x, dx);
                if (want_g) t.accumulate(gain, dg);
                if (want_b) t.accumulate(bias, db);
              });
}

Var Tape::attention(Var q, Var k, Var v, const AttentionLayout& layout) {
  auto res = kernels::attention(value(q), value(k), value(v), layout);
  std::vector<std::uint8_t> mask(layout.key_mask.begin(), layout.key_mask.end());
  AttentionLayout lay = layout;
  return push(std::move(res.out), any_grad({q, k, v}),
              [q, k, v, lay, mask = std::move(mask), probs = std::move(res.probs)](Tape& t, const TensorD& g) mutable {
                lay.key_mask = mask;
                auto gr = kernels::attention_backward(t.value(q), t.value(k), t.value(v), probs, g, lay);
                t.accumulate(q, gr.dq);
                t.accumulate(k, gr.dk);
                t.accumulate(v, gr.dv);
              });
}

Var Tape::dropout(Var x, double p) {
  if (!training_ || p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  TensorD mask(value(x).shape());
  for (double& m : mask.data()) m = keep(rng_) ? s : 0.0;
  TensorD out = ops::mul(value(x), mask);
  return push(std::move(out), any_grad({x}),
              [x, mask = std::move(mask)](Tape& t, const TensorD& g) { t.accumulate(x, ops::mul(g, mask)); });
}

Var Tape::pool(Var x, std::span<const PoolGroup> groups) {
  std::vector<PoolGroup> gs(groups.begin(), groups.end());
  return push(ops::pool(value(x), groups), any_grad({x}), [x, gs = std::move(gs)](Tape& t, const TensorD& g) {
    TensorD& gx = t.grad_buffer(x);
    const std::size_t h = gx.cols();
    for (std::size_t i = 0; i < gs.size(); ++i) {
      auto src = g.row(i);
      for (const PoolTerm& term : gs[i]) {
        auto dst = gx.row(term.row);
        for (std::size_t j = 0; j < h; ++j) dst[j] += term.weight * src[j];
      }
    }
  });
}

Var Tape::row_dot(Var a, Var b) {
  return push(ops::row_dot(value(a), value(b)), any_grad({a, b}), [a, b](Tape& t, const TensorD& g) {
    const TensorD& va = t.value(a);
    const TensorD& vb = t.value(b);
    TensorD da(va.shape()), db(vb.shape());
    for (std::size_t r = 0; r < va.rows(); ++r) {
      auto ra = va.row(r), rb = vb.row(r);
      auto dra = da.row(r), drb = db.row(r);
      for (std::size_t j = 0; j < ra.size(); ++j) {
        dra[j] = g[r] * rb[j];
        drb[j] = g[r] * ra[j];
      }
    }
    t.accumulate(a, da);
    t.accumulate(b, db);
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  std::vector<const TensorD*> ptrs;
  bool need = false;
  for (Var p : parts) {
    ptrs.push_back(&value(p));
    need = need || nodes_.at(p.id).requires_grad;
  }
  TensorD out = ops::concat_rows<double>(ptrs);
  return push(std::move(out), need, [parts](Tape& t, const TensorD& g) {
    std::size_t offset = 0;
    for (Var p : parts) {
      const TensorD& pv = t.value(p);
      if (t.nodes_[p.id].requires_grad) {
        TensorD& gp = t.grad_buffer(p);
        for (std::size_t i = 0; i < pv.numel(); ++i) gp[i] += g[offset + i];
      }
      offset += pv.numel();
    }
  });
}

Var Tape::sum(Var a) {
  return push(ops::sum(value(a)), any_grad({a}), [a](Tape& t, const TensorD& g) {
    TensorD& ga = t.grad_buffer(a);
    for (double& v : ga.data()) v += g[0];
  });
}

Var Tape::cross_entropy(Var logits, std::span<const std::size_t> targets) {
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return push(ops::cross_entropy(value(logits), targets), any_grad({logits}),
              [logits, tg = std::move(tg)](Tape& t, const TensorD& g) {
                TensorD p = kernels::softmax_rows(t.value(logits));
                const double s = g[0] / static_cast<double>(p.rows());
                for (std::size_t r = 0; r < p.rows(); ++r) {
                  auto row = p.row(r);
                  row[tg[r]] -= 1.0;
                  for (double& v : row) v *= s;
                }
                t.accumulate(logits, p);
              });
}

Var Tape::logistic_loss(Var scores, std::span<const double> labels) {
  std::vector<double> lb(labels.begin(), labels.end());
  return push(ops::logistic_loss(value(scores), labels), any_grad({scores}),
              [scores, lb = std::move(lb)](Tape& t, const TensorD& g) {
                const TensorD& s = t.value(scores);
                TensorD d(s.shape());
                for (std::size_t i = 0; i < lb.size(); ++i) {
                  const double sig = 1.0 / (1.0 + std::exp(-s[i]));
                  d[i] = g[0] * (sig - lb[i]) / static_cast<double>(lb.size());
                }
                t.accumulate(scores, d);
              });
}

}  // namespace polyscore
