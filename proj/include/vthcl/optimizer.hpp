#pragma once

// SGD with heavy-ball momentum and decoupled-from-BN weight decay:
//   g <- grad + wd * p   (only where decay applies)
//   v <- mu * v + g
//   p <- p - lr * v

#include <cmath>
#include <map>
#include <string>

#include "vthcl/errors.hpp"
#include "vthcl/tensor.hpp"

namespace vthcl {

template <typename T>
struct SgdState {
  std::map<std::string, Tensor<T>> velocity;
};

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

template <typename T>
void sgd_update(const std::string& name, Tensor<T>& param, const Tensor<T>& grad, bool decay, double lr,
                const SgdConfig& cfg, SgdState<T>& state) {
  require_shape(grad.shape(), param.shape(), "gradient of " + name);
  auto it = state.velocity.find(name);
  if (it == state.velocity.end()) it = state.velocity.emplace(name, Tensor<T>(param.shape())).first;
  Tensor<T>& v = it->second;
  require_shape(v.shape(), param.shape(), "velocity of " + name);
  const T mu = static_cast<T>(cfg.momentum);
  const T wd = decay ? static_cast<T>(cfg.weight_decay) : T(0);
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i] + wd * param[i];
    v[i] = mu * v[i] + g;
    param[i] -= step * v[i];
  }
}

}  // namespace vthcl
