#include "polyscore/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace polyscore {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::AdamDecay ? "adam_decay" : "adamax"; }
std::string to_string(LrSchedule s) { return s == LrSchedule::InverseSqrt ? "inverse_sqrt" : "plateau"; }

OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "adam_decay" || s == "adam") return OptimizerKind::AdamDecay;
  if (s == "adamax") return OptimizerKind::AdamaxNoDecay;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (adam_decay | adamax)");
}

LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "inverse_sqrt") return LrSchedule::InverseSqrt;
  if (s == "plateau") return LrSchedule::Plateau;
  throw ConfigError("unknown lr schedule '" + std::string(s) + "' (inverse_sqrt | plateau)");
}

std::vector<std::string> OptimizerConfig::problems() const {
  std::vector<std::string> out;
  if (!(lr > 0)) out.push_back("lr must be > 0");
  if (!(beta1 >= 0 && beta1 < 1)) out.push_back("beta1 must be in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) out.push_back("beta2 must be in [0, 1)");
  if (!(eps > 0)) out.push_back("eps must be > 0");
  if (!(weight_decay >= 0)) out.push_back("weight_decay must be >= 0");
  if (!(plateau_decay_factor > 0 && plateau_decay_factor < 1)) out.push_back("plateau_decay_factor must be in (0, 1)");
  if (plateau_patience < 1) out.push_back("plateau_patience must be >= 1");
  return out;
}

double scheduled_lr(const OptimizerConfig& cfg, const OptimizerState& st, std::uint64_t step) {
  if (step < 1) throw ContractError("optimizer steps are 1-based");
  const double k = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) return cfg.lr * k / w * st.lr_scale;
  if (cfg.schedule == LrSchedule::InverseSqrt) return cfg.lr * std::sqrt(std::max(w, 1.0) / k);
  return cfg.lr * st.lr_scale;
}

void optimizer_step(ParamSet<double>& params, const std::map<std::string, TensorD>& grads,
                    const OptimizerConfig& cfg, OptimizerState& st) {
  for (const auto& [name, g] : grads) {
    for (double v : g.data()) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite gradient in '" + name + "' at step " + std::to_string(st.step + 1) +
                           "; training aborted");
      }
    }
  }
  st.kind = cfg.kind;
  const std::uint64_t t = ++st.step;
  const double lr = scheduled_lr(cfg, st, t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (const auto& [name, g] : grads) {
    auto pit = params.find(name);
    if (pit == params.end()) throw ContractError("gradient for unknown parameter '" + name + "'");
    TensorD& p = pit->second;
    if (p.shape() != g.shape()) throw DimensionError("gradient shape mismatch for '" + name + "'");
    auto [mit, _m] = st.first_moment.try_emplace(name, p.shape());
    auto [vit, _v] = st.second_moment.try_emplace(name, p.shape());
    TensorD& m = mit->second;
    TensorD& v = vit->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      if (cfg.kind == OptimizerKind::AdamDecay) {
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[i]);
      } else {
        v[i] = std::max(cfg.beta2 * v[i], std::abs(g[i]));
        p[i] -= (lr / bc1) * m[i] / (v[i] + cfg.eps);
      }
    }
  }
}

bool report_validation(const OptimizerConfig& cfg, OptimizerState& st, double valid_loss) {
  if (valid_loss < st.best_valid) {
    st.best_valid = valid_loss;
    st.bad_evals = 0;
    return false;
  }
  if (++st.bad_evals < cfg.plateau_patience) return false;
  st.lr_scale *= cfg.plateau_decay_factor;
  st.bad_evals = 0;
  return true;
}

}  // namespace polyscore
