#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "polyscore/tensor.hpp"

namespace polyscore {

// Named parameters, ordered by name. The ordering is what the checkpoint
// writer relies on for byte-stable output.
template <typename T>
using ParamSet = std::map<std::string, Tensor<T>, std::less<>>;

using ParamPredicate = std::function<bool(const std::string&)>;

template <typename U, typename T>
ParamSet<U> cast_params(const ParamSet<T>& params) {
  ParamSet<U> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<U>());
  return out;
}

template <typename T>
std::vector<std::string> param_names(const ParamSet<T>& params) {
  std::vector<std::string> out;
  for (const auto& [name, _] : params) out.push_back(name);
  return out;
}

}  // namespace polyscore
