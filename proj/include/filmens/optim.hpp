#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "filmens/tensor.hpp"

namespace filmens {

struct OptimizerConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t epochs = 200;
  std::size_t batch_size = 128;

  void validate() const {
    if (lr0 <= 0.0) throw ValueError("OptimizerConfig: lr0 must be > 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ValueError("OptimizerConfig: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ValueError("OptimizerConfig: weight_decay must be >= 0");
    if (batch_size < 1) throw ValueError("OptimizerConfig: batch_size must be >= 1");
  }
};

/// Momentum velocity buffers, one per trainable tensor, in parameter order.
template <typename S>
struct OptimizerState {
  std::vector<std::vector<S>> velocity;
  std::size_t epoch = 0;

  static OptimizerState init(const std::vector<Tensor<S>>& params) {
    OptimizerState st;
    st.velocity.reserve(params.size());
    for (const auto& p : params) st.velocity.emplace_back(p.size(), S(0));
    return st;
  }
};

/// One SGD step with momentum and L2 weight decay folded into the gradient:
/// g <- grad + wd*w;  v <- mu*v + g;  w <- w - lr*v.
template <typename S>
void sgd_step(std::vector<Tensor<S>>& params, OptimizerState<S>& state, double lr,
              const OptimizerConfig& cfg) {
  if (state.velocity.size() != params.size())
    throw ShapeError("sgd_step: " + std::to_string(state.velocity.size()) +
                     " velocity buffers for " + std::to_string(params.size()) + " parameters");
  const S mu = static_cast<S>(cfg.momentum);
  const S wd = static_cast<S>(cfg.weight_decay);
  const S step = static_cast<S>(lr);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    auto& v = state.velocity[pi];
    if (v.size() != p.size())
      throw ShapeError("sgd_step: velocity buffer " + std::to_string(pi) + " has " +
                       std::to_string(v.size()) + " entries, parameter has " +
                       std::to_string(p.size()));
    S* w = p.data();
    const S* g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const S gi = g[i] + wd * w[i];
      v[i] = mu * v[i] + gi;
      w[i] -= step * v[i];
    }
  }
}

/// Cosine annealing from lr0 at epoch 0 down to 0 at epoch T.
inline double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0) {
  if (epoch > total_epochs)
    throw ValueError("cosine_lr: epoch " + std::to_string(epoch) + " past horizon " +
                     std::to_string(total_epochs));
  if (total_epochs == 0) return lr0;
  return 0.5 * lr0 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                         static_cast<double>(total_epochs)));
}

}  // namespace filmens
