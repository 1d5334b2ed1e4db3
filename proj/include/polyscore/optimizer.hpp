#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "polyscore/params.hpp"

namespace polyscore {

enum class OptimizerKind { AdamDecay, AdamaxNoDecay };
enum class LrSchedule { InverseSqrt, Plateau };

std::string to_string(OptimizerKind k);
std::string to_string(LrSchedule s);
OptimizerKind parse_optimizer_kind(std::string_view s);
LrSchedule parse_lr_schedule(std::string_view s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamDecay;
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; ignored by AdamaxNoDecay
  std::size_t warmup_steps = 100;
  LrSchedule schedule = LrSchedule::Plateau;
  double plateau_decay_factor = 0.4;
  std::size_t plateau_patience = 2;  // consecutive non-improving evaluations
  std::size_t eval_interval = 0;     // steps; 0 means half an epoch

  std::vector<std::string> problems() const;
};

/// Everything needed to continue optimization exactly where it stopped.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::AdamDecay;
  std::uint64_t step = 0;  // completed steps
  ParamSet<double> first_moment;
  ParamSet<double> second_moment;  // Adam: v; Adamax: u (infinity norm)
  double lr_scale = 1.0;            // product of plateau decays so far
  double best_valid = std::numeric_limits<double>::infinity();
  std::uint64_t bad_evals = 0;

  bool operator==(const OptimizerState&) const = default;
};

// Learning rate used for step `step` (1-based): linear warmup, then either
// inverse-square-root decay or the plateau-scaled constant.
double scheduled_lr(const OptimizerConfig& cfg, const OptimizerState& st, std::uint64_t step);

// One update of every parameter that has a gradient entry. Parameters
// without one are left untouched. Throws NumericError on non-finite grads.
void optimizer_step(ParamSet<double>& params, const std::map<std::string, TensorD>& grads,
                    const OptimizerConfig& cfg, OptimizerState& st);

// Records a validation loss; returns true when it triggered a decay.
bool report_validation(const OptimizerConfig& cfg, OptimizerState& st, double valid_loss);

}  // namespace polyscore
